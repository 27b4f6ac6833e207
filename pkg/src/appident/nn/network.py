"""Sequential network container with a fused softmax cross-entropy loss."""

from __future__ import annotations

import numpy as np

from .layers import LSTM, BatchNorm, Conv1D, Dense, Dropout, Layer, MaxPool1D, Param, ReLU, Softmax

LAYER_KINDS = {
    "conv1d": Conv1D,
    "relu": ReLU,
    "maxpool1d": MaxPool1D,
    "batchnorm": BatchNorm,
    "dense": Dense,
    "dropout": Dropout,
    "softmax": Softmax,
    "lstm": LSTM,
}


def layer_from_spec(spec: dict, dtype=np.float32) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    cls = LAYER_KINDS[kind]
    if kind in ("conv1d", "dense", "lstm", "batchnorm"):
        spec["dtype"] = dtype
    return cls(**spec)


class Network:
    """An ordered layer stack ending in softmax; output rows sum to one."""

    def __init__(self, layers: list[Layer], rng: np.random.Generator | None = None):
        self.layers = layers
        self.rng = rng or np.random.default_rng()
        for i, layer in enumerate(layers):
            layer.rng = self.rng
            if isinstance(layer, ReLU):
                # safe: every producing layer emits a fresh buffer
                layer.inplace = i > 0

    def parameters(self) -> list[Param]:
        out: list[Param] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def manifest(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 2 and isinstance(self.layers[0], Conv1D):
            return x[:, :, None]
        return x

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = self._prepare(np.asarray(x))
        for layer in self.layers:
            out = layer.forward(out, training=training)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def loss_and_backward(self, x: np.ndarray, y: np.ndarray) -> float:
        """Train-mode forward, mean cross-entropy, gradients for every param.

        The softmax/cross-entropy pair is differentiated jointly from the
        cached logits, which stays finite even for confident predictions.
        """
        probs = self.forward(x, training=True)
        softmax = self.layers[-1]
        if not isinstance(softmax, Softmax):
            raise TypeError("loss_and_backward requires a softmax output layer")
        loss = cross_entropy_from_logits(softmax._logits, y)
        dlogits = probs.copy()
        dlogits[np.arange(len(y)), y] -= 1.0
        dlogits /= len(y)
        for layer in reversed(self.layers[:-1]):
            dlogits = layer.backward(dlogits)
        return loss

    def predict_proba(self, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
        """Inference in chunks to bound activation memory."""
        x = np.asarray(x)
        out = []
        for start in range(0, len(x), batch_size):
            out.append(self.forward(x[start : start + batch_size], training=False))
        return np.concatenate(out, axis=0)

    def calibrate_stats(self, x: np.ndarray, batch_size: int = 64) -> None:
        """Set batch-norm running stats to exact moments over ``x``.

        Momentum accumulation lags badly when an epoch is only a handful of
        batches; one sweep after training pins the inference statistics to
        the trained distribution.
        """
        bns = [layer for layer in self.layers if isinstance(layer, BatchNorm)]
        if not bns:
            return
        for layer in bns:
            layer.start_calibration()
        for start in range(0, len(x), batch_size):
            self.forward(x[start : start + batch_size], training=True)
        for layer in bns:
            layer.finish_calibration()


def cross_entropy_from_logits(logits: np.ndarray, y: np.ndarray) -> float:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(y)), y]))


def cross_entropy(probs: np.ndarray, y: np.ndarray, eps: float = 1e-12) -> float:
    p = np.clip(probs[np.arange(len(y)), y].astype(np.float64), eps, None)
    return float(-np.log(p).mean())
