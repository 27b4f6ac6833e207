"""Network layers with explicit forward/backward passes.

All layers operate on channels-last arrays: convolutional inputs are
(batch, length, channels), dense inputs are flattened to (batch, features).
Convolution with stride 1 is computed as a sum of shifted GEMMs so the
dominant cost lands in BLAS sgemm calls instead of an im2col gather.

Every layer caches what its backward pass needs during forward; backward
returns the gradient w.r.t. the layer input and fills the ``grad`` buffer of
each :class:`Param`.
"""

from __future__ import annotations

import numpy as np


class Param:
    """A trainable tensor and its gradient buffer."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    # stochastic layers pick this up from the owning network
    rng: np.random.Generator | None = None


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, *, rng=None, dtype=np.float32):
        if kernel_size < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        rng = rng or np.random.default_rng()
        fan_in = kernel_size * in_channels
        self.w = Param(
            glorot_uniform(rng, (kernel_size, in_channels, out_channels), fan_in, out_channels, dtype),
            "conv_w",
        )
        self.b = Param(np.zeros(out_channels, dtype=dtype), "conv_b")
        self._x: np.ndarray | None = None

    def params(self):
        return [self.w, self.b]

    def spec(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
        }

    def _out_len(self, length: int) -> int:
        return (length - self.kernel_size) // self.stride + 1

    def _w_flat(self) -> np.ndarray:
        # (channel-major, kernel-minor) to match sliding_window_view layout
        return np.ascontiguousarray(self.w.value.transpose(1, 0, 2)).reshape(
            self.in_channels * self.kernel_size, self.out_channels
        )

    def _im2col(self, x, out_len):
        k, s = self.kernel_size, self.stride
        if s == 1:
            windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)
        else:
            idx = np.arange(out_len)[:, None] * s + np.arange(k)[None, :]
            windows = x[:, idx, :].transpose(0, 1, 3, 2)
        # (batch, out_len, in_channels, kernel) flattened for one GEMM
        return np.ascontiguousarray(windows).reshape(x.shape[0] * out_len, self.in_channels * k)

    def forward(self, x, training=False):
        x = np.ascontiguousarray(x)
        b_sz, length, _ = x.shape
        out_len = self._out_len(length)
        cols = self._im2col(x, out_len)
        y = cols @ self._w_flat()
        y += self.b.value
        if training:
            self._cols = cols
            self._in_shape = x.shape
        else:
            self._cols = None
        return y.reshape(b_sz, out_len, self.out_channels)

    def backward(self, dy):
        k, s = self.kernel_size, self.stride
        b_sz, out_len, _ = dy.shape
        dy2 = np.ascontiguousarray(dy).reshape(b_sz * out_len, self.out_channels)
        self.b.grad[...] = dy2.sum(axis=0)
        dw_flat = self._cols.T @ dy2
        self.w.grad[...] = dw_flat.reshape(self.in_channels, k, self.out_channels).transpose(1, 0, 2)
        dcols = (dy2 @ self._w_flat().T).reshape(b_sz, out_len, self.in_channels, k)
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        if s == 1:
            for d in range(k):
                dx[:, d : d + out_len, :] += dcols[:, :, :, d]
        else:
            idx = np.arange(out_len)[:, None] * s + np.arange(k)[None, :]
            np.add.at(dx, (slice(None), idx), dcols.transpose(0, 1, 3, 2))
        self._cols = None
        return dx


class ReLU(Layer):
    """Rectifier. Mutates its input buffer when marked safe by the network
    (the producing layer does not cache its output), halving memory traffic.
    """

    kind = "relu"
    inplace = False

    def forward(self, x, training=False):
        y = np.maximum(x, 0, out=x) if self.inplace else np.maximum(x, 0)
        self._mask = y > 0
        return y

    def backward(self, dy):
        dy *= self._mask
        return dy


class MaxPool1D(Layer):
    kind = "maxpool1d"

    def __init__(self, kernel_size=2, stride=2):
        if kernel_size < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        self.kernel_size = kernel_size
        self.stride = stride

    def spec(self):
        return {"kind": self.kind, "kernel_size": self.kernel_size, "stride": self.stride}

    def forward(self, x, training=False):
        b_sz, length, ch = x.shape
        k, s = self.kernel_size, self.stride
        self._in_shape = x.shape
        if k == 2 and s == 2 and length % 2 == 0:
            a = x[:, ::2, :]
            b = x[:, 1::2, :]
            self._first_wins = a >= b  # argmax tie-break: earlier position
            self._idx = None
            return np.where(self._first_wins, a, b)
        out_len = (length - k) // s + 1
        idx = np.arange(out_len)[:, None] * s + np.arange(k)[None, :]
        windows = x[:, idx, :]
        self._argmax = windows.argmax(axis=2)
        self._idx = idx
        return windows.max(axis=2)

    def backward(self, dy):
        b_sz, out_len, ch = dy.shape
        k, s = self.kernel_size, self.stride
        if self._idx is None:
            dx = np.empty(self._in_shape, dtype=dy.dtype)
            dx[:, ::2, :] = dy * self._first_wins
            dx[:, 1::2, :] = dy * ~self._first_wins
            return dx
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        onehot = self._argmax[:, :, None, :] == np.arange(k)[None, None, :, None]
        dwin = dy[:, :, None, :] * onehot
        if s == k:
            flat_len = out_len * k
            dx[:, :flat_len, :] += dwin.reshape(b_sz, flat_len, ch)
        else:
            np.add.at(dx, (slice(None), self._idx), dwin)
        return dx


class BatchNorm(Layer):
    """Normalizes each channel over all other axes; running stats for inference."""

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels, dtype=dtype), "bn_gamma")
        self.beta = Param(np.zeros(channels, dtype=dtype), "bn_beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._seen_batch = False
        self._cal: tuple | None = None

    def params(self):
        return [self.gamma, self.beta]

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def start_calibration(self) -> None:
        self._cal = (np.zeros(self.channels, np.float64), np.zeros(self.channels, np.float64), 0)

    def finish_calibration(self) -> None:
        """Replace running stats with exact moments of the calibration pass."""
        total, total_sq, count = self._cal
        mean = total / count
        self.running_mean[...] = mean.astype(self.running_mean.dtype)
        self.running_var[...] = (total_sq / count - mean * mean).astype(self.running_var.dtype)
        self._cal = None
        self._seen_batch = True

    def forward(self, x, training=False):
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if self._cal is not None:
                total, total_sq, count = self._cal
                n = x.size // x.shape[-1]
                total += n * mean.astype(np.float64)
                total_sq += np.einsum(
                    "blc,blc->c" if x.ndim == 3 else "bc,bc->c", x, x, dtype=np.float64
                )
                self._cal = (total, total_sq, count + n)
            elif not self._seen_batch:
                self.running_mean[...] = mean
                self.running_var[...] = var
                self._seen_batch = True
            else:
                m = self.momentum
                self.running_mean[...] = m * self.running_mean + (1 - m) * mean
                self.running_var[...] = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = x - mean.astype(x.dtype)
        xhat *= inv_std
        if training:
            self._xhat = xhat
            self._inv_std = inv_std
            self._axes = axes
        else:
            self._xhat = None
        y = xhat * self.gamma.value
        y += self.beta.value
        return y

    def backward(self, dy):
        if self._xhat is None:  # inference-mode graph: affine transform only
            return dy * (self.gamma.value / np.sqrt(self.running_var + self.eps))
        axes = self._axes
        xhat, inv_std = self._xhat, self._inv_std
        n = xhat.size // xhat.shape[-1]
        self.beta.grad[...] = dy.sum(axis=axes)
        sub = "blc,blc->c" if xhat.ndim == 3 else "bc,bc->c"
        self.gamma.grad[...] = np.einsum(sub, dy, xhat)
        m2 = (self.gamma.grad * self.gamma.value / n).astype(dy.dtype)  # mean(dxhat*xhat)
        dx = dy * self.gamma.value
        dx -= self.beta.grad * (self.gamma.value / n)  # mean(dxhat)
        xhat *= m2  # xhat cache consumed here
        dx -= xhat
        dx *= inv_std
        self._xhat = None
        return dx


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, units, *, rng=None, dtype=np.float32):
        self.in_features = in_features
        self.units = units
        rng = rng or np.random.default_rng()
        self.w = Param(glorot_uniform(rng, (in_features, units), in_features, units, dtype), "dense_w")
        self.b = Param(np.zeros(units, dtype=dtype), "dense_b")

    def params(self):
        return [self.w, self.b]

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features, "units": self.units}

    def forward(self, x, training=False):
        self._in_shape = x.shape
        x2 = np.ascontiguousarray(x).reshape(x.shape[0], -1)
        self._x2 = x2
        return x2 @ self.w.value + self.b.value

    def backward(self, dy):
        self.w.grad[...] = self._x2.T @ dy
        self.b.grad[...] = dy.sum(axis=0)
        return (dy @ self.w.value.T).reshape(self._in_shape)


class Dropout(Layer):
    """Inverted dropout: scaled at train time, identity at inference."""

    kind = "dropout"

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        rng = self.rng or np.random.default_rng()
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        self._logits = x
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        self._p = p
        return p

    def backward(self, dy):
        p = self._p
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class LSTM(Layer):
    """Single-layer LSTM over (batch, steps, features); returns the final state.

    Input dropout uses one mask per sample shared across time steps. Gate
    order inside the packed weight matrices is input, forget, cell, output.
    """

    kind = "lstm"

    def __init__(self, input_size, units, dropout=0.0, *, rng=None, dtype=np.float32):
        self.input_size = input_size
        self.units = units
        self.dropout = dropout
        rng = rng or np.random.default_rng()
        self.w = Param(glorot_uniform(rng, (input_size, 4 * units), input_size, units, dtype), "lstm_w")
        self.u = Param(glorot_uniform(rng, (units, 4 * units), units, units, dtype), "lstm_u")
        self.b = Param(np.zeros(4 * units, dtype=dtype), "lstm_b")

    def params(self):
        return [self.w, self.u, self.b]

    def spec(self):
        return {
            "kind": self.kind,
            "input_size": self.input_size,
            "units": self.units,
            "dropout": self.dropout,
        }

    def forward(self, x, training=False):
        b_sz, steps, _ = x.shape
        u = self.units
        dtype = x.dtype
        if training and self.dropout > 0.0:
            rng = self.rng or np.random.default_rng()
            keep = 1.0 - self.dropout
            self._mask = (rng.random((b_sz, self.input_size)) < keep).astype(dtype) / keep
        else:
            self._mask = None
        h = np.zeros((b_sz, u), dtype=dtype)
        c = np.zeros((b_sz, u), dtype=dtype)
        self._cache = []
        for t in range(steps):
            xt = x[:, t, :]
            if self._mask is not None:
                xt = xt * self._mask
            z = xt @ self.w.value + h @ self.u.value + self.b.value
            i = _sigmoid(z[:, :u])
            f = _sigmoid(z[:, u : 2 * u])
            g = np.tanh(z[:, 2 * u : 3 * u])
            o = _sigmoid(z[:, 3 * u :])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            self._cache.append((xt, h, c, i, f, g, o, tanh_c))
            h = o * tanh_c
            c = c_new
        self._steps = steps
        return h

    def backward(self, dh):
        u = self.units
        b_sz = dh.shape[0]
        dtype = dh.dtype
        dx = np.zeros((b_sz, self._steps, self.input_size), dtype=dtype)
        self.w.grad[...] = 0
        self.u.grad[...] = 0
        self.b.grad[...] = 0
        dc = np.zeros((b_sz, u), dtype=dtype)
        for t in range(self._steps - 1, -1, -1):
            xt, h_prev, c_prev, i, f, g, o, tanh_c = self._cache[t]
            do = dh * tanh_c
            dct = dh * o * (1.0 - tanh_c * tanh_c) + dc
            di = dct * g
            dg = dct * i
            df = dct * c_prev
            dc = dct * f
            dz = np.concatenate(
                (di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)), axis=1
            )
            self.w.grad += xt.T @ dz
            self.u.grad += h_prev.T @ dz
            self.b.grad += dz.sum(axis=0)
            dxt = dz @ self.w.value.T
            if self._mask is not None:
                dxt = dxt * self._mask
            dx[:, t, :] = dxt
            dh = dz @ self.u.value.T
        return dx
