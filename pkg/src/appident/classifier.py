"""Single-flow app identification: rebalancing, stratified folds, the CNN.

The network is a fixed 1-D architecture over the 1536-value flow vector:
two 256-filter convolutions (kernel 3), max-pool + batch norm, two
128-filter convolutions (kernel 2), max-pool + batch norm, then two
128-unit dense layers and a softmax output sized to the label set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .encoding import FlowDataset
from .metrics import MetricsReport
from .nn import (
    BatchNorm,
    Conv1D,
    Dense,
    MaxPool1D,
    Network,
    ReLU,
    Softmax,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_model,
)
from .nn.network import layer_from_spec

CNN_LAYOUT = (
    # (filters/units, kernel, stride) per conv block; pools are k=2 s=2
    (256, 3, 1),
    (256, 3, 1),
    (128, 2, 1),
    (128, 2, 1),
)
DENSE_UNITS = (128, 128)


def build_cnn(n_classes: int, input_len: int = 1536, rng=None, dtype=np.float32) -> Network:
    rng = rng or np.random.default_rng()
    layers = []
    length, channels = input_len, 1
    for block, (filters, kernel, stride) in enumerate(CNN_LAYOUT):
        layers += [Conv1D(channels, filters, kernel, stride, rng=rng, dtype=dtype), ReLU()]
        length = (length - kernel) // stride + 1
        channels = filters
        if block % 2 == 1:
            layers += [MaxPool1D(2, 2), BatchNorm(filters, dtype=dtype)]
            length = (length - 2) // 2 + 1
    features = length * channels
    for units in DENSE_UNITS:
        layers += [Dense(features, units, rng=rng, dtype=dtype), ReLU()]
        features = units
    layers += [Dense(features, n_classes, rng=rng, dtype=dtype), Softmax()]
    return Network(layers, rng)


def network_state(net: Network) -> tuple[list[dict], list[np.ndarray], dict[str, np.ndarray]]:
    params = [p.value for p in net.parameters()]
    buffers = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, BatchNorm):
            for name, buf in layer.buffers().items():
                buffers[f"layer{i}.{name}"] = buf
    return net.manifest(), params, buffers


def restore_network(
    layer_specs: list[dict],
    params: list[np.ndarray],
    buffers: dict[str, np.ndarray],
    dtype=np.float32,
    rng=None,
) -> Network:
    net = Network([layer_from_spec(s, dtype=dtype) for s in layer_specs], rng or np.random.default_rng())
    own = net.parameters()
    if len(own) != len(params):
        raise ValueError(f"parameter count mismatch: {len(own)} vs {len(params)}")
    for p, value in zip(own, params):
        p.value[...] = value
    for i, layer in enumerate(net.layers):
        if isinstance(layer, BatchNorm):
            layer.running_mean[...] = buffers[f"layer{i}.running_mean"]
            layer.running_var[...] = buffers[f"layer{i}.running_var"]
            layer._seen_batch = True
    return net


class CnnAppClassifier(BaseEstimator, ClassifierMixin):
    """Sklearn-style estimator around the flow-byte CNN.

    Parameters mirror the training protocol: Adam with the given rate and
    moments, plateau early stopping on training loss, fixed seed. ``fit``
    accepts the encoded (n_flows, 1536) matrix and any label array.
    """

    def __init__(
        self,
        learning_rate=0.001,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        max_epochs=30,
        patience=5,
        min_improvement=1e-6,
        batch_size=64,
        random_state=0,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_improvement = min_improvement
        self.batch_size = batch_size
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            max_epochs=self.max_epochs,
            patience=self.patience,
            min_improvement=self.min_improvement,
            batch_size=self.batch_size,
            seed=self.random_state,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float32)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        rng = np.random.default_rng(self.random_state)
        self.network_ = build_cnn(len(self.classes_), X.shape[1], rng=rng)
        self.n_features_in_ = X.shape[1]
        self.history_ = train_model(self.network_, (X,), y_idx.astype(np.int64), self._train_config())
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float32)
        return self.network_.predict_proba(X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "network_")
        specs, params, buffers = network_state(self.network_)
        manifest = {
            "model_type": "cnn_classifier",
            "layers": specs,
            "class_names": [str(c) for c in self.classes_],
            "classes_dtype": str(self.classes_.dtype),
            "seed": self.random_state,
            "input_length": self.n_features_in_,
        }
        save_checkpoint(path, manifest, params, buffers)

    @classmethod
    def load(cls, path: str | Path) -> "CnnAppClassifier":
        blob = load_checkpoint(path)
        manifest = blob["manifest"]
        if manifest.get("model_type") != "cnn_classifier":
            raise ValueError(f"{path}: not a cnn_classifier checkpoint")
        clf = cls(random_state=manifest["seed"])
        clf.network_ = restore_network(manifest["layers"], blob["params"], blob["buffers"])
        clf.classes_ = np.array(manifest["class_names"]).astype(manifest["classes_dtype"])
        clf.n_features_in_ = manifest["input_length"]
        return clf


def rebalance(ds: FlowDataset, seed: int = 0) -> tuple[FlowDataset, np.ndarray]:
    """Under-sample the two biggest classes to the third-biggest's size and
    duplicate every class below 1% of the original total up to the 1% line.

    Returns the rebalanced dataset and, per new row, the original row index
    (duplicates share their origin so fold splits can co-assign them).
    """
    n_classes = ds.n_classes
    counts = np.bincount(ds.y, minlength=n_classes)
    for c in range(n_classes):
        if counts[c] == 0:
            raise ValueError(f"class {ds.class_names[c]!r} has zero rows")
    total = int(counts.sum())
    rng = np.random.default_rng(seed)

    order = sorted(range(n_classes), key=lambda c: (-counts[c], c))
    targets = counts.astype(np.int64).copy()
    if n_classes >= 3:
        third = counts[order[2]]
        for c in order[:2]:
            targets[c] = min(targets[c], third)
    one_pct = int(np.ceil(0.01 * total))
    for c in range(n_classes):
        if counts[c] < 0.01 * total:
            targets[c] = max(targets[c], one_pct)

    origins: list[np.ndarray] = []
    for c in range(n_classes):
        rows = np.flatnonzero(ds.y == c)
        if targets[c] < counts[c]:
            keep = rng.choice(rows, size=targets[c], replace=False)
            origins.append(np.sort(keep))
        elif targets[c] > counts[c]:
            extra = rng.choice(rows, size=targets[c] - counts[c], replace=True)
            origins.append(np.concatenate([rows, extra]))
        else:
            origins.append(rows)
    origin_idx = np.concatenate(origins)
    return ds.subset(origin_idx), origin_idx


def kfold_indices(
    y: np.ndarray,
    origins: np.ndarray,
    n_folds: int = 10,
    seed: int = 0,
    class_names: list[str] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified folds over *origin* rows; duplicated rows follow their origin."""
    uniq, inverse = np.unique(origins, return_inverse=True)
    first_row = np.zeros(len(uniq), dtype=np.int64)
    first_row[inverse] = np.arange(len(origins))
    origin_class = y[first_row]

    counts = np.bincount(origin_class)
    for c, cnt in enumerate(counts):
        if 0 < cnt < n_folds:
            name = class_names[c] if class_names else str(c)
            raise ValueError(f"class {name!r} has only {cnt} distinct rows; need >= {n_folds}")

    skf = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    fold_of_origin = np.empty(len(uniq), dtype=np.int64)
    for fold, (_, test_origins) in enumerate(skf.split(np.zeros(len(uniq)), origin_class)):
        fold_of_origin[test_origins] = fold
    fold_of_row = fold_of_origin[inverse]

    splits = []
    for fold in range(n_folds):
        test_idx = np.flatnonzero(fold_of_row == fold)
        train_idx = np.flatnonzero(fold_of_row != fold)
        splits.append((train_idx, test_idx))
    return splits


def evaluate_network(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    class_names: list[str],
    slices: dict[str, np.ndarray] | None = None,
) -> MetricsReport:
    probs = net.predict_proba(np.asarray(X, dtype=np.float32))
    y_pred = np.argmax(probs, axis=1)
    return MetricsReport.from_predictions(np.asarray(y), y_pred, class_names, slices=slices)


@dataclass
class CrossValReport:
    fold_reports: list[MetricsReport]
    mean_accuracy: float
    mean_macro_precision: float
    mean_macro_recall: float
    mean_macro_f1: float
    fold_epochs: list[int] = field(default_factory=list)

    @classmethod
    def from_folds(cls, reports: list[MetricsReport], epochs: list[int]) -> "CrossValReport":
        return cls(
            fold_reports=reports,
            mean_accuracy=float(np.mean([r.accuracy for r in reports])),
            mean_macro_precision=float(np.mean([r.macro_precision for r in reports])),
            mean_macro_recall=float(np.mean([r.macro_recall for r in reports])),
            mean_macro_f1=float(np.mean([r.macro_f1 for r in reports])),
            fold_epochs=epochs,
        )

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "mean_macro_precision": self.mean_macro_precision,
            "mean_macro_recall": self.mean_macro_recall,
            "mean_macro_f1": self.mean_macro_f1,
            "fold_epochs": self.fold_epochs,
            "folds": [r.to_dict() for r in self.fold_reports],
        }


def _dataset_slices(ds: FlowDataset, idx: np.ndarray) -> dict[str, np.ndarray]:
    sub = ds.subset(idx)
    return {"udp": sub.slice_udp(), "http": sub.slice_http(), "https": sub.slice_https()}


def train_app_classifier(
    ds: FlowDataset,
    n_folds: int = 10,
    seed: int = 0,
    final_model: bool = False,
    rebalance_first: bool = True,
    **classifier_params,
) -> tuple[CnnAppClassifier | None, CrossValReport]:
    """Rebalance, split into stratified folds, train and score each fold.

    When ``final_model`` is set an additional classifier is fitted on the
    whole rebalanced dataset (after the cross-validated metrics are in) so
    there is a deployable artifact to checkpoint.
    """
    if rebalance_first:
        balanced, origins = rebalance(ds, seed)
    else:
        balanced, origins = ds, np.arange(len(ds))

    reports: list[MetricsReport] = []
    epochs: list[int] = []
    if n_folds > 1:
        splits = kfold_indices(balanced.y, origins, n_folds, seed, balanced.class_names)
        for fold, (train_idx, test_idx) in enumerate(splits):
            clf = CnnAppClassifier(random_state=seed + fold, **classifier_params)
            clf.fit(balanced.X[train_idx], balanced.y[train_idx])
            probs = clf.predict_proba(balanced.X[test_idx])
            pred_idx = np.argmax(probs, axis=1)
            y_pred = clf.classes_[pred_idx]
            reports.append(
                MetricsReport.from_predictions(
                    balanced.y[test_idx],
                    y_pred,
                    balanced.class_names,
                    slices=_dataset_slices(balanced, test_idx),
                )
            )
            epochs.append(clf.history_.epochs_run)

    model = None
    if final_model or n_folds <= 1:
        model = CnnAppClassifier(random_state=seed, **classifier_params)
        model.fit(balanced.X, balanced.y)
        if n_folds <= 1:
            reports.append(
                MetricsReport.from_predictions(
                    balanced.y,
                    model.predict(balanced.X),
                    balanced.class_names,
                    slices=_dataset_slices(balanced, np.arange(len(balanced))),
                )
            )
            epochs.append(model.history_.epochs_run)
    return model, CrossValReport.from_folds(reports, epochs)
