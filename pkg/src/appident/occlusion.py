"""Field-occlusion analysis: zero a handshake field everywhere at inference
time and measure the accuracy change against the unmodified baseline.

The model is never retrained or mutated; each report row re-classifies the
evaluation slice with one selector set's byte spans zeroed in every vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import CnnAppClassifier
from .encoding import FlowDataset
from .tls import DEFAULT_OCCLUSION_ROWS, TlsFieldMap, _selector_matches, occlude_vector


@dataclass
class OcclusionSpec:
    rows: list[tuple[str, frozenset[str]]] = field(default_factory=lambda: list(DEFAULT_OCCLUSION_ROWS))
    slice_name: str = "https"

    def __post_init__(self) -> None:
        for name, selectors in self.rows:
            if not selectors:
                raise ValueError(f"row {name!r} has an empty selector set")


@dataclass
class OcclusionRow:
    name: str
    selectors: frozenset[str]
    accuracy: float
    delta: float
    flows_with_field: int


@dataclass
class OcclusionReport:
    baseline_accuracy: float
    slice_name: str
    slice_size: int
    rows: list[OcclusionRow]

    def to_dict(self) -> dict:
        return {
            "slice": self.slice_name,
            "slice_size": self.slice_size,
            "baseline_accuracy": self.baseline_accuracy,
            "rows": [
                {
                    "occluded": r.name,
                    "selectors": sorted(r.selectors),
                    "accuracy": r.accuracy,
                    "delta": r.delta,
                    "flows_with_field": r.flows_with_field,
                }
                for r in self.rows
            ],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    def to_text(self) -> str:
        width = max([len("Occluded part")] + [len(r.name) for r in self.rows]) + 2
        lines = [
            f"slice: {self.slice_name} ({self.slice_size} flows)",
            f"{'Occluded part':<{width}} {'Accuracy':>9} {'Delta':>9} {'Present':>8}",
            f"{'-':<{width}} {self.baseline_accuracy:9.4f} {0.0:9.4f} {self.slice_size:8d}",
        ]
        for r in self.rows:
            lines.append(f"{r.name:<{width}} {r.accuracy:9.4f} {r.delta:9.4f} {r.flows_with_field:8d}")
        return "\n".join(lines)


def _slice_indices(ds: FlowDataset, name: str) -> np.ndarray:
    if name == "https":
        return ds.slice_https()
    if name == "http":
        return ds.slice_http()
    if name == "udp":
        return ds.slice_udp()
    if name == "all":
        return np.arange(len(ds))
    raise ValueError(f"unknown slice {name!r}")


def run_occlusion(
    clf: CnnAppClassifier,
    ds: FlowDataset,
    field_maps: "list[TlsFieldMap | None]",
    spec: OcclusionSpec | None = None,
) -> OcclusionReport:
    """Score every selector row of the spec on the chosen dataset slice.

    ``field_maps`` runs parallel to the dataset rows and must have been
    parsed in the dataset's strip mode.
    """
    spec = spec or OcclusionSpec()
    if len(field_maps) != len(ds):
        raise ValueError("field_maps must align with dataset rows")
    for fmap in field_maps:
        if fmap is not None and fmap.mode is not ds.mode:
            raise ValueError(f"field map mode {fmap.mode} != dataset mode {ds.mode}")
    idx = _slice_indices(ds, spec.slice_name)
    if len(idx) == 0:
        raise ValueError(f"slice {spec.slice_name!r} is empty")
    X = ds.X[idx]
    y = ds.y[idx]
    maps = [field_maps[i] for i in idx]

    baseline = float(np.mean(clf.predict(X) == y))

    rows: list[OcclusionRow] = []
    for name, selectors in spec.rows:
        Xo = X.copy()
        present = 0
        for i, fmap in enumerate(maps):
            if fmap is None:
                continue
            if any(any(_selector_matches(sel, span) for sel in selectors) for span in fmap.spans):
                present += 1
                Xo[i] = occlude_vector(Xo[i], fmap, selectors)
        acc = float(np.mean(clf.predict(Xo) == y))
        rows.append(OcclusionRow(name, selectors, acc, baseline - acc, present))
    return OcclusionReport(
        baseline_accuracy=baseline,
        slice_name=spec.slice_name,
        slice_size=len(idx),
        rows=rows,
    )
