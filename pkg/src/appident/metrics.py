"""Classification metrics built around an explicit confusion matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


@dataclass
class MetricsReport:
    accuracy: float
    confusion: np.ndarray
    class_names: list[str]
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    support: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    slices: dict[str, "MetricsReport"] = field(default_factory=dict)

    @classmethod
    def from_predictions(
        cls,
        y_true: np.ndarray,
        y_pred: np.ndarray,
        class_names: list[str],
        slices: dict[str, np.ndarray] | None = None,
    ) -> "MetricsReport":
        n = len(class_names)
        cm = confusion_matrix(y_true, y_pred, n)
        support = cm.sum(axis=1)
        pred_count = cm.sum(axis=0)
        diag = np.diag(cm).astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            precision = np.where(pred_count > 0, diag / pred_count, 0.0)
            recall = np.where(support > 0, diag / support, 0.0)
            denom = precision + recall
            f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
        total = cm.sum()
        weights = support / total if total else np.zeros(n)
        report = cls(
            accuracy=float(diag.sum() / total) if total else 0.0,
            confusion=cm,
            class_names=list(class_names),
            per_class_precision=precision,
            per_class_recall=recall,
            per_class_f1=f1,
            support=support,
            macro_precision=float(precision.mean()),
            macro_recall=float(recall.mean()),
            macro_f1=float(f1.mean()),
            weighted_precision=float((precision * weights).sum()),
            weighted_recall=float((recall * weights).sum()),
            weighted_f1=float((f1 * weights).sum()),
        )
        for name, idx in (slices or {}).items():
            if len(idx):
                report.slices[name] = cls.from_predictions(y_true[idx], y_pred[idx], class_names)
        return report

    def to_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "class_names": self.class_names,
            "support": self.support.tolist(),
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "confusion_matrix": self.confusion.tolist(),
        }
        if self.slices:
            d["slices"] = {name: rep.to_dict() for name, rep in self.slices.items()}
        return d

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    def to_text(self) -> str:
        lines = [
            f"accuracy           {self.accuracy:8.4f}",
            f"macro precision    {self.macro_precision:8.4f}",
            f"macro recall       {self.macro_recall:8.4f}",
            f"macro F1           {self.macro_f1:8.4f}",
            f"weighted precision {self.weighted_precision:8.4f}",
            f"weighted recall    {self.weighted_recall:8.4f}",
            f"weighted F1        {self.weighted_f1:8.4f}",
            "",
            f"{'class':<24} {'prec':>7} {'recall':>7} {'f1':>7} {'support':>8}",
        ]
        for i, name in enumerate(self.class_names):
            lines.append(
                f"{name:<24} {self.per_class_precision[i]:7.4f} "
                f"{self.per_class_recall[i]:7.4f} {self.per_class_f1[i]:7.4f} {self.support[i]:8d}"
            )
        for name, rep in self.slices.items():
            lines.append("")
            lines.append(f"[slice {name}] accuracy {rep.accuracy:.4f} over {rep.support.sum()} rows")
        return "\n".join(lines)

    def confusion_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("," + ",".join(self.class_names) + "\n")
            for name, row in zip(self.class_names, self.confusion):
                fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
