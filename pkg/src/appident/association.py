"""Source-app identification over windows of temporally adjacent flows.

A window is a target flow plus its next k flows (by start time) that begin
within a fixed threshold of the target; later slots are zero-padded. Each
window step runs through a shared true-label CNN, its class distribution is
concatenated with the step's relative start time, and an LSTM over the
(by default reversed) step sequence feeds a softmax over the source apps.
Mixed-traffic augmentation replaces neighbor slots with flows from other
apps to measure and train away sensitivity to background traffic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .classifier import CnnAppClassifier, network_state, restore_network
from .encoding import FlowDataset
from .errors import FormatError
from .metrics import MetricsReport
from .nn import LSTM, Dense, Network, Softmax, TrainConfig, load_checkpoint, save_checkpoint, train_model
from .nn.network import cross_entropy_from_logits

WINDOWS_MAGIC = b"APWN0001"


@dataclass
class LabelSpace:
    source_apps: list[str]
    ambiguous_labels: list[str]

    def __post_init__(self) -> None:
        overlap = set(self.source_apps) & set(self.ambiguous_labels)
        if overlap:
            raise ValueError(f"labels in both sets: {sorted(overlap)}")

    @property
    def true_labels(self) -> list[str]:
        return list(self.source_apps) + list(self.ambiguous_labels)


@dataclass
class AssocConfig:
    k: int = 2
    time_threshold: float = 2.0
    lstm_units: int = 50
    lstm_dropout: float = 0.5
    feed_order: str = "reverse"  # reverse | forward
    fine_tune_cnn: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.time_threshold <= 0:
            raise ValueError("time_threshold must be positive")
        if self.feed_order not in ("reverse", "forward"):
            raise ValueError(f"bad feed_order {self.feed_order!r}")


@dataclass
class WindowSet:
    """Rectangular window batch: slot 0 is the target, then k adjacent slots."""

    X: np.ndarray  # (n, k+1, feature_len) float32, zero rows for padding
    times: np.ndarray  # (n, k+1) float32, 0 for target and padded slots
    y: np.ndarray  # (n,) source-app label index
    target_rows: np.ndarray  # (n,) row index into the source dataset
    adjacent: np.ndarray  # (n, k) row index or -1 for padding
    is_ambiguous: np.ndarray  # (n,) target flow is an ambiguous-template flow
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.y)

    @property
    def k(self) -> int:
        return self.adjacent.shape[1]

    def packed(self) -> np.ndarray:
        """(n, steps, feature_len + 1) with the relative time appended."""
        return np.concatenate([self.X, self.times[:, :, None]], axis=2)

    def subset(self, idx: np.ndarray) -> "WindowSet":
        return WindowSet(
            X=self.X[idx],
            times=self.times[idx],
            y=self.y[idx],
            target_rows=self.target_rows[idx],
            adjacent=self.adjacent[idx],
            is_ambiguous=self.is_ambiguous[idx],
            class_names=self.class_names,
        )


def build_windows(ds: FlowDataset, k: int = 2, time_threshold: float = 2.0) -> WindowSet:
    """One window per dataset row, neighbors chosen by start-time order."""
    n = len(ds)
    order = np.argsort(ds.start_times, kind="stable")
    feature_len = ds.X.shape[1]
    X = np.zeros((n, k + 1, feature_len), dtype=np.float32)
    times = np.zeros((n, k + 1), dtype=np.float32)
    adjacent = np.full((n, k), -1, dtype=np.int32)
    starts = ds.start_times

    for pos, row in enumerate(order):
        X[row, 0] = ds.X[row]
        t0 = starts[row]
        slot = 0
        for nxt_pos in range(pos + 1, n):
            nxt = order[nxt_pos]
            dt = starts[nxt] - t0
            if dt > time_threshold:
                break
            X[row, slot + 1] = ds.X[nxt]
            times[row, slot + 1] = dt
            adjacent[row, slot] = nxt
            slot += 1
            if slot == k:
                break

    source_names = ds.class_names
    is_ambiguous = np.zeros(n, dtype=bool)
    if len(ds.true_class_names):
        for i in range(n):
            t = ds.true_y[i]
            if t >= 0 and ds.true_class_names[t] not in source_names:
                is_ambiguous[i] = True
    return WindowSet(
        X=X,
        times=times,
        y=ds.y.astype(np.int64),
        target_rows=np.arange(n, dtype=np.int32),
        adjacent=adjacent,
        is_ambiguous=is_ambiguous,
        class_names=list(source_names),
    )


def augment_mixed(
    ws: WindowSet,
    scenario: str,
    seed: int = 0,
    pool: tuple[np.ndarray, np.ndarray] | None = None,
) -> WindowSet:
    """Duplicate every window and corrupt chosen slots in the duplicate.

    ``scenario`` R2 replaces slot 2 (first neighbor), R3 slot 3, R23 both;
    the replacement flow comes from another source app, keeping the slot's
    relative time (a background app's flow occupying the same instant).
    """
    slots = {"R2": (1,), "R3": (2,), "R23": (1, 2)}.get(scenario)
    if slots is None:
        raise ValueError(f"unknown scenario {scenario!r} (R2, R3 or R23)")
    if max(slots) > ws.k:
        raise ValueError(f"scenario {scenario} needs k >= {max(slots)}")
    pool_X, pool_y = pool if pool is not None else (ws.X[:, 0, :], ws.y)
    rng = np.random.default_rng(seed)

    dup = ws.subset(np.arange(len(ws)))
    dup.X = dup.X.copy()
    dup.adjacent = dup.adjacent.copy()
    for i in range(len(dup)):
        for slot in slots:
            for _ in range(64):
                j = int(rng.integers(0, len(pool_y)))
                if pool_y[j] != dup.y[i]:
                    break
            else:
                raise RuntimeError("no replacement flow from another app found")
            dup.X[i, slot] = pool_X[j]
            dup.adjacent[i, slot - 1] = -2  # replaced marker
    return WindowSet(
        X=np.concatenate([ws.X, dup.X]),
        times=np.concatenate([ws.times, dup.times]),
        y=np.concatenate([ws.y, dup.y]),
        target_rows=np.concatenate([ws.target_rows, dup.target_rows]),
        adjacent=np.concatenate([ws.adjacent, dup.adjacent]),
        is_ambiguous=np.concatenate([ws.is_ambiguous, dup.is_ambiguous]),
        class_names=ws.class_names,
    )


class JointModel:
    """Shared-weight CNN per step feeding an LSTM and a source-app softmax."""

    def __init__(
        self,
        cnn: Network,
        n_sources: int,
        lstm_units: int = 50,
        lstm_dropout: float = 0.5,
        feed_order: str = "reverse",
        fine_tune_cnn: bool = True,
        rng: np.random.Generator | None = None,
    ):
        rng = rng or np.random.default_rng()
        self.cnn = cnn
        self.n_true = cnn.layers[-2].units  # output dense before softmax
        self.lstm = LSTM(self.n_true + 1, lstm_units, dropout=lstm_dropout, rng=rng)
        self.head = Dense(lstm_units, n_sources, rng=rng)
        self.out = Softmax()
        self.feed_order = feed_order
        self.fine_tune_cnn = fine_tune_cnn
        self.lstm.rng = rng
        self.rng = rng

    def parameters(self):
        params = list(self.lstm.params()) + list(self.head.params())
        if self.fine_tune_cnn:
            params = self.cnn.parameters() + params
        return params

    def _steps(self, X: np.ndarray, times: np.ndarray, training: bool) -> np.ndarray:
        b, s, f = X.shape
        probs = self.cnn.forward(X.reshape(b * s, f), training=training)
        steps = np.concatenate([probs.reshape(b, s, self.n_true), times[:, :, None].astype(probs.dtype)], axis=2)
        if self.feed_order == "reverse":
            steps = steps[:, ::-1, :]
        return np.ascontiguousarray(steps)

    def forward(self, X: np.ndarray, times: np.ndarray, training: bool = False) -> np.ndarray:
        h = self.lstm.forward(self._steps(X, times, training), training=training)
        return self.out.forward(self.head.forward(h, training), training)

    def loss_and_backward(self, X: np.ndarray, times: np.ndarray, y: np.ndarray) -> float:
        probs = self.forward(X, times, training=True)
        loss = cross_entropy_from_logits(self.out._logits, y)
        dlogits = probs.copy()
        dlogits[np.arange(len(y)), y] -= 1.0
        dlogits /= len(y)
        dh = self.head.backward(dlogits)
        dsteps = self.lstm.backward(dh)
        if self.feed_order == "reverse":
            dsteps = dsteps[:, ::-1, :]
        b, s, _ = dsteps.shape
        dprobs = np.ascontiguousarray(dsteps[:, :, : self.n_true]).reshape(b * s, self.n_true)
        self.cnn.backward(dprobs)
        return loss

    def predict_proba(self, X: np.ndarray, times: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(X), batch_size):
            sl = slice(start, start + batch_size)
            out.append(self.forward(X[sl], times[sl], training=False))
        return np.concatenate(out, axis=0)

    def calibrate_stats(self, X: np.ndarray, times: np.ndarray, batch_size: int = 32) -> None:
        b, s, f = X.shape
        self.cnn.calibrate_stats(X.reshape(b * s, f), batch_size=batch_size * s)


class FlowAssociationClassifier(BaseEstimator, ClassifierMixin):
    """Joint CNN+LSTM estimator over flow windows.

    ``fit`` takes the packed window array (n, k+1, feature_len + 1) whose
    last column per step is the relative start time, plus source labels.
    The pretrained true-label CNN is copied, never mutated, so the same
    pretrained model can seed many joint classifiers.
    """

    def __init__(
        self,
        cnn: CnnAppClassifier | None = None,
        lstm_units: int = 50,
        lstm_dropout: float = 0.5,
        feed_order: str = "reverse",
        fine_tune_cnn: bool = True,
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        max_epochs: int = 50,
        patience: int = 5,
        min_improvement: float = 1e-6,
        batch_size: int = 32,
        random_state: int = 0,
    ):
        self.cnn = cnn
        self.lstm_units = lstm_units
        self.lstm_dropout = lstm_dropout
        self.feed_order = feed_order
        self.fine_tune_cnn = fine_tune_cnn
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_improvement = min_improvement
        self.batch_size = batch_size
        self.random_state = random_state

    @staticmethod
    def split_packed(packed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return packed[:, :, :-1], packed[:, :, -1]

    def fit(self, X, y):
        if self.cnn is None or not hasattr(self.cnn, "network_"):
            raise ValueError("cnn must be a fitted CnnAppClassifier over true labels")
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 3:
            raise ValueError("X must be (n_windows, steps, feature_len + 1)")
        features, times = self.split_packed(X)
        self.classes_, y_idx = np.unique(np.asarray(y), return_inverse=True)
        rng = np.random.default_rng(self.random_state)
        specs, params, buffers = network_state(self.cnn.network_)
        cnn_copy = restore_network(specs, [p.copy() for p in params], buffers, rng=rng)
        self.model_ = JointModel(
            cnn_copy,
            n_sources=len(self.classes_),
            lstm_units=self.lstm_units,
            lstm_dropout=self.lstm_dropout,
            feed_order=self.feed_order,
            fine_tune_cnn=self.fine_tune_cnn,
            rng=rng,
        )
        cfg = TrainConfig(
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
        self.history_ = train_model(
            self.model_, (np.ascontiguousarray(features), np.ascontiguousarray(times)), y_idx.astype(np.int64), cfg
        )
        self.n_features_in_ = X.shape[2] - 1
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=np.float32)
        features, times = self.split_packed(X)
        return self.model_.predict_proba(features, times, batch_size=self.batch_size)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "model_")
        cnn_specs, cnn_params, cnn_buffers = network_state(self.model_.cnn)
        manifest = {
            "model_type": "joint_classifier",
            "cnn_layers": cnn_specs,
            "lstm": self.model_.lstm.spec(),
            "head": self.model_.head.spec(),
            "feed_order": self.feed_order,
            "fine_tune_cnn": self.fine_tune_cnn,
            "class_names": [str(c) for c in self.classes_],
            "classes_dtype": str(self.classes_.dtype),
            "seed": self.random_state,
        }
        params = cnn_params + [p.value for p in self.model_.lstm.params()] + [p.value for p in self.model_.head.params()]
        save_checkpoint(path, manifest, params, cnn_buffers)

    @classmethod
    def load(cls, path: str | Path) -> "FlowAssociationClassifier":
        blob = load_checkpoint(path)
        manifest = blob["manifest"]
        if manifest.get("model_type") != "joint_classifier":
            raise ValueError(f"{path}: not a joint_classifier checkpoint")
        # rebuild the CNN first, then the LSTM/head from the remaining params
        cnn_specs = manifest["cnn_layers"]
        tmp = restore_network(cnn_specs, blob["params"][: _param_count(cnn_specs)], blob["buffers"])
        clf = cls(
            lstm_units=manifest["lstm"]["units"],
            lstm_dropout=manifest["lstm"]["dropout"],
            feed_order=manifest["feed_order"],
            fine_tune_cnn=manifest["fine_tune_cnn"],
            random_state=manifest["seed"],
        )
        clf.classes_ = np.array(manifest["class_names"]).astype(manifest["classes_dtype"])
        model = JointModel(
            tmp,
            n_sources=len(clf.classes_),
            lstm_units=manifest["lstm"]["units"],
            lstm_dropout=manifest["lstm"]["dropout"],
            feed_order=manifest["feed_order"],
            fine_tune_cnn=manifest["fine_tune_cnn"],
        )
        rest = blob["params"][_param_count(cnn_specs) :]
        own = list(model.lstm.params()) + list(model.head.params())
        for p, val in zip(own, rest):
            p.value[...] = val
        clf.model_ = model
        return clf


def _param_count(layer_specs: list[dict]) -> int:
    counts = {"conv1d": 2, "dense": 2, "batchnorm": 2, "lstm": 3}
    return sum(counts.get(s["kind"], 0) for s in layer_specs)


def evaluate_joint(clf: FlowAssociationClassifier, ws: WindowSet) -> MetricsReport:
    y_pred = clf.predict(ws.packed())
    slices = {}
    amb = np.flatnonzero(ws.is_ambiguous)
    if len(amb):
        slices["ambiguous"] = amb
        slices["app_specific"] = np.flatnonzero(~ws.is_ambiguous)
    return MetricsReport.from_predictions(ws.y, y_pred, ws.class_names, slices=slices)


def save_windows(ws: WindowSet, path: str | Path) -> None:
    """Window ids + times + labels; vectors are reloaded from the dataset."""
    n, k = len(ws), ws.k
    with open(path, "wb") as fh:
        fh.write(WINDOWS_MAGIC)
        fh.write(struct.pack("<IIH", n, k, len(ws.class_names)))
        for name in ws.class_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(ws.target_rows.astype(np.int32).tobytes())
        fh.write(ws.adjacent.astype(np.int32).tobytes())
        fh.write(ws.times.astype(np.float32).tobytes())
        fh.write(ws.y.astype(np.int32).tobytes())
        fh.write(ws.is_ambiguous.astype(np.uint8).tobytes())


def load_windows(path: str | Path, ds: FlowDataset) -> WindowSet:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != WINDOWS_MAGIC:
            raise FormatError(f"{path}: not a windows file (magic {magic!r})")
        n, k, n_names = struct.unpack("<IIH", fh.read(10))
        names = []
        for _ in range(n_names):
            (ln,) = struct.unpack("<H", fh.read(2))
            names.append(fh.read(ln).decode("utf-8"))
        target_rows = np.frombuffer(fh.read(4 * n), dtype=np.int32).copy()
        adjacent = np.frombuffer(fh.read(4 * n * k), dtype=np.int32).reshape(n, k).copy()
        times = np.frombuffer(fh.read(4 * n * (k + 1)), dtype=np.float32).reshape(n, k + 1).copy()
        y = np.frombuffer(fh.read(4 * n), dtype=np.int32).astype(np.int64)
        is_ambiguous = np.frombuffer(fh.read(n), dtype=np.uint8).astype(bool)
    feature_len = ds.X.shape[1]
    X = np.zeros((n, k + 1, feature_len), dtype=np.float32)
    X[:, 0] = ds.X[target_rows]
    for slot in range(k):
        rows = adjacent[:, slot]
        valid = rows >= 0
        X[valid, slot + 1] = ds.X[rows[valid]]
    return WindowSet(
        X=X,
        times=times,
        y=y,
        target_rows=target_rows,
        adjacent=adjacent,
        is_ambiguous=is_ambiguous,
        class_names=names,
    )
