"""Layer primitives with a shared forward/backward contract.

Every layer consumes and produces batched arrays (leading batch axis).
``forward`` caches what ``backward`` needs; ``backward(dout)`` returns the
gradient with respect to the input together with a dict of gradients for
the trainable parameters, each shaped like its parameter.

The free functions (``conv2d``, ``max_pool`` ...) accept either a single
sample or a batch and are what the layers are built from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import F64, Rng


def _batched(x: np.ndarray, rank: int):
    x = np.asarray(x)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ValueError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, H', W', kh, kw) view, no copy
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _out_size(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


def conv2d(x, kernels, bias=None, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of ``kernels`` over ``x`` plus a per-channel bias.

    Parameters
    ----------
    x : array, shape (c_in, h, w) or (n, c_in, h, w)
    kernels : array, shape (c_out, c_in, k_h, k_w)
    bias : array, shape (c_out,), optional
    stride : int
    """
    xb, single = _batched(x, 3)
    kernels = np.asarray(kernels)
    c_out, c_in, kh, kw = kernels.shape
    if xb.shape[1] != c_in:
        raise ValueError(f"input has {xb.shape[1]} channels, kernels expect {c_in}")
    if kh > xb.shape[2] or kw > xb.shape[3]:
        raise ValueError(f"kernel {kh}x{kw} larger than input {xb.shape[2]}x{xb.shape[3]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if kh == 1 and kw == 1:
        cols = xb[:, :, ::stride, ::stride]
        out = np.tensordot(kernels[:, :, 0, 0], cols, axes=([1], [1])).transpose(1, 0, 2, 3)
    else:
        win = _windows(xb, kh, kw, stride)
        out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def relu(x) -> np.ndarray:
    return np.maximum(x, 0)


def max_pool(x, window: int, stride: int) -> np.ndarray:
    xb, single = _batched(x, 3)
    if window > xb.shape[2] or window > xb.shape[3]:
        raise ValueError(f"pool window {window} exceeds input {xb.shape[2]}x{xb.shape[3]}")
    out = _windows(xb, window, window, stride).max(axis=(4, 5))
    return out[0] if single else out


def global_avg_pool(x) -> np.ndarray:
    xb, single = _batched(x, 3)
    out = xb.mean(axis=(2, 3))
    return out[0] if single else out


def fully_connected(x, W, b) -> np.ndarray:
    x = np.asarray(x)
    W = np.asarray(W)
    if x.shape[-1] != W.shape[1] or np.shape(b) != (W.shape[0],):
        raise ValueError(f"shape mismatch: x {x.shape}, W {W.shape}, b {np.shape(b)}")
    return x @ W.T + b


def dropout(x, rate: float, rng: Rng | None, training: bool) -> np.ndarray:
    """Inverted dropout; the inference path returns ``x`` itself."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    keep = rng.generator.random(np.shape(x)) >= rate
    return np.where(keep, x / (1 - rate), 0).astype(np.asarray(x).dtype, copy=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy over the batch and its gradient wrt ``logits``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"need {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(n), labels]
    loss = float(np.mean(log_norm - picked))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


def squared_loss(pred, target):
    """Half squared error summed over outputs, averaged over the batch."""
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    diff = pred - target
    n = pred.shape[0]
    return float(0.5 * np.sum(diff.astype(F64) ** 2) / n), diff / n


def he_normal(rng: Rng, shape, fan_in: int, dtype=F64) -> np.ndarray:
    return (rng.generator.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Kink(Exception):
    """A perturbation crossed a non-differentiable point (relu sign, pool winner)."""


def cos_delta(x, d):
    """``cos(x + d) - cos(x)`` without cancellation."""
    return -2.0 * np.sin(x + d / 2) * np.sin(d / 2)


def softmax_xent_delta(logits, labels, d) -> float:
    """Change of the mean cross-entropy when ``logits`` move by ``d``."""
    p = softmax(np.asarray(logits, dtype=F64))
    n = p.shape[0]
    picked = d[np.arange(n), np.asarray(labels, dtype=np.int64)]
    return float(np.mean(np.log1p(np.sum(p * np.expm1(d), axis=1)) - picked))


def squared_loss_delta(pred, target, d) -> float:
    r = np.asarray(pred, dtype=F64) - np.asarray(target, dtype=F64).reshape(pred.shape)
    return float(np.sum(r * d + 0.5 * d * d) / pred.shape[0])


class Layer:
    """Base class. ``params`` maps local names to arrays; ``trainable`` lists
    the names that receive gradients.

    Besides ``forward``/``backward`` each layer implements ``delta``: the exact
    change of its output when the input moves by ``d_in`` and/or one parameter
    entry moves by ``v`` (``param_delta = (name, flat_index, v)``), evaluated
    around the last forward without forming ``out(new) - out(old)``.
    """

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.trainable: tuple[str, ...] = ()
        self._cache = None

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def delta(self, d_in, param_delta=None):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called before forward")
        return self._cache

    def pattern(self):
        """Piecewise-linear region id of the last forward (None if smooth)."""
        return None


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, W, b, stride: int = 1, input_grad: bool = True):
        super().__init__()
        self.params = {"W": W, "b": b}
        self.trainable = ("W", "b")
        self.stride = stride
        self.input_grad = input_grad

    def forward(self, x, training=False):
        W = self.params["W"]
        kh, kw = W.shape[2:]
        win = _windows(x, kh, kw, self.stride)
        self._cache = (x, win)
        return conv2d(x, W, self.params["b"], self.stride)

    def _out_slice(self, i, j, oh, ow):
        s = self.stride
        return (slice(i, i + s * (oh - 1) + 1, s), slice(j, j + s * (ow - 1) + 1, s))

    def backward(self, dout):
        x, win = self._cached()
        W = self.params["W"]
        dW = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
        db = dout.sum(axis=(0, 2, 3))
        dx = None
        if self.input_grad:
            oh, ow = dout.shape[2:]
            dx = np.zeros(x.shape, dtype=np.result_type(dout, W))
            for i in range(W.shape[2]):
                for j in range(W.shape[3]):
                    contrib = np.tensordot(dout, W[:, :, i, j], axes=([1], [0]))
                    dx[(slice(None), slice(None)) + self._out_slice(i, j, oh, ow)] += contrib.transpose(0, 3, 1, 2)
        return dx, {"W": dW.astype(W.dtype, copy=False), "b": db.astype(W.dtype, copy=False)}

    def delta(self, d_in, param_delta=None):
        x, win = self._cached()
        W = self.params["W"]
        oh, ow = win.shape[2:4]
        out = np.zeros((x.shape[0], W.shape[0], oh, ow))
        if d_in is not None:
            out += conv2d(d_in, W, None, self.stride)
        if param_delta is not None:
            name, idx, v = param_delta
            if name == "W":
                f, c, i, j = np.unravel_index(idx, W.shape)
                out[:, f] += v * x[(slice(None), c) + self._out_slice(i, j, oh, ow)]
            else:
                out[:, idx] += v
        return out


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = (x, mask)
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._cached()[1], dout, 0).astype(dout.dtype, copy=False), {}

    def delta(self, d_in, param_delta=None):
        x, mask = self._cached()
        if np.any((x + d_in > 0) != mask):
            raise Kink(self.kind)
        return np.where(mask, d_in, 0.0)

    def pattern(self):
        return None if self._cache is None else np.packbits(self._cache[1]).tobytes()


class Cosine(Layer):
    kind = "cosine"

    def forward(self, x, training=False):
        self._cache = x
        return np.cos(x)

    def backward(self, dout):
        return -np.sin(self._cached()) * dout, {}

    def delta(self, d_in, param_delta=None):
        return cos_delta(self._cached(), d_in)


class MaxPool(Layer):
    """Max pooling; on ties the first element in row-major window order wins."""

    kind = "maxpool"

    def __init__(self, window: int, stride: int):
        super().__init__()
        self.window = window
        self.stride = stride

    def _flat_windows(self, x):
        k = self.window
        win = _windows(x, k, k, self.stride)
        return win.reshape(*win.shape[:4], k * k)

    def forward(self, x, training=False):
        k = self.window
        if k > x.shape[2] or k > x.shape[3]:
            raise ValueError(f"pool window {k} exceeds input {x.shape[2]}x{x.shape[3]}")
        flat = self._flat_windows(x)
        arg = flat.argmax(axis=-1)
        self._cache = (x, arg)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        x, arg = self._cached()
        k, s = self.window, self.stride
        oh, ow = arg.shape[2:]
        dx = np.zeros(x.shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                hit = arg == i * k + j
                if hit.any():
                    dx[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += np.where(hit, dout, 0)
        return dx, {}

    def delta(self, d_in, param_delta=None):
        x, arg = self._cached()
        if np.any(self._flat_windows(x + d_in).argmax(axis=-1) != arg):
            raise Kink(self.kind)
        return np.take_along_axis(self._flat_windows(d_in), arg[..., None], axis=-1)[..., 0]

    def pattern(self):
        return None if self._cache is None else self._cache[1].tobytes()


class GlobalAvgPool(Layer):
    kind = "gap"

    def forward(self, x, training=False):
        self._cache = x.shape
        return global_avg_pool(x)

    def backward(self, dout):
        shape = self._cached()
        hw = shape[2] * shape[3]
        return np.broadcast_to((dout / hw)[:, :, None, None], shape).copy(), {}

    def delta(self, d_in, param_delta=None):
        return global_avg_pool(d_in)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cached()), {}

    def delta(self, d_in, param_delta=None):
        return d_in.reshape(d_in.shape[0], -1)


class FullyConnected(Layer):
    kind = "fc"

    def __init__(self, W, b):
        super().__init__()
        self.params = {"W": W, "b": b}
        self.trainable = ("W", "b")

    def forward(self, x, training=False):
        self._cache = x
        return fully_connected(x, self.params["W"], self.params["b"])

    def backward(self, dout):
        x = self._cached()
        W = self.params["W"]
        return dout @ W, {"W": (dout.T @ x).astype(W.dtype, copy=False),
                          "b": dout.sum(axis=0).astype(W.dtype, copy=False)}

    def delta(self, d_in, param_delta=None):
        x = self._cached()
        W = self.params["W"]
        out = np.zeros((x.shape[0], W.shape[0]))
        if d_in is not None:
            out += d_in @ W.T
        if param_delta is not None:
            name, idx, v = param_delta
            if name == "W":
                u, j = np.unravel_index(idx, W.shape)
                out[:, u] += v * x[:, j]
            else:
                out[:, idx] += v
        return out


class Dropout(Layer):
    """Inverted dropout. Set ``fixed_mask`` to replay a mask (gradient checks)."""

    kind = "dropout"

    def __init__(self, rate: float, rng: Rng):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self.fixed_mask = None
        self._identity = True

    def forward(self, x, training=False):
        if not training or self.rate == 0:
            self._cache = None
            self._identity = True
            return x
        self._identity = False
        if self.fixed_mask is not None:
            keep = self.fixed_mask
        else:
            keep = self.rng.generator.random(x.shape) >= self.rate
        scale = np.where(keep, 1.0 / (1 - self.rate), 0.0).astype(x.dtype)
        self._cache = scale
        return x * scale

    def backward(self, dout):
        if self._identity:
            return dout, {}
        return dout * self._cached(), {}

    def delta(self, d_in, param_delta=None):
        return d_in if self._identity else d_in * self._cached()

    def mask(self):
        return None if self._identity else self._cache > 0


@dataclass
class GradReport:
    """Worst relative error per checked tensor between analytic and
    central-difference gradients."""

    errors: dict[str, float] = field(default_factory=dict)
    worst_entry: dict[str, tuple] = field(default_factory=dict)
    step: float = 1e-6
    checked: int = 0
    skipped: int = 0

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst_name(self) -> str | None:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)

    def passed(self, tol: float = 1e-5) -> bool:
        return self.worst < tol

    def merge(self, other: "GradReport", prefix: str = "") -> "GradReport":
        for k, v in other.errors.items():
            self.errors[prefix + k] = v
            self.worst_entry[prefix + k] = other.worst_entry.get(k)
        self.checked += other.checked
        self.skipped += other.skipped
        return self


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=F64)
    numeric = np.asarray(numeric, dtype=F64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def check_gradients(change, analytic: dict, sizes: dict, step: float = 1e-6,
                    max_entries: int | None = None, rng: Rng | None = None) -> GradReport:
    """Compare ``analytic`` gradients with central differences.

    ``change(name, i, v)`` returns ``f(theta + v e_i) - f(theta)`` for entry
    ``i`` of tensor ``name``; the numeric derivative is
    ``(change(+h) - change(-h)) / 2h``. Entries for which ``change`` raises
    :class:`Kink` are skipped. With ``max_entries`` a random subset of each
    tensor is checked.
    """
    report = GradReport(step=step)
    for name, size in sizes.items():
        g = np.asarray(analytic[name], dtype=F64).reshape(-1)
        idx = np.arange(size)
        if max_entries is not None and size > max_entries:
            idx = np.sort((rng or Rng(0)).generator.choice(size, max_entries, replace=False))
        worst, worst_at = 0.0, None
        for i in idx:
            try:
                num = (change(name, int(i), step) - change(name, int(i), -step)) / (2 * step)
            except Kink:
                report.skipped += 1
                continue
            err = float(relative_error(g[i], num))
            report.checked += 1
            if err >= worst:
                worst, worst_at = err, (int(i), float(g[i]), float(num))
        report.errors[name] = worst
        report.worst_entry[name] = worst_at
    return report


def grad_check(layer: Layer, x, step: float = 1e-6, weights=None, training: bool = False,
               max_entries: int | None = None, seed: int = 0, corrupt: float = 0.0) -> GradReport:
    """Check ``layer.backward`` against central differences of
    ``sum(weights * layer.forward(x))`` (``weights`` defaults to ones, the plain
    sum of outputs). Entries of the input and of every trainable parameter
    are checked. ``corrupt`` scales the analytic gradients (negative control).
    """
    x = np.array(x, dtype=F64)
    for name, p in layer.params.items():
        if p.dtype != F64:
            raise TypeError(f"parameter {name} must be float64 for a gradient check")
    out = layer.forward(x, training=training)
    weights = np.ones(out.shape) if weights is None else np.asarray(weights, dtype=F64)
    if weights.shape != out.shape:
        raise ValueError(f"weights shape {weights.shape} != output shape {out.shape}")
    if isinstance(layer, Dropout) and not layer._identity:
        layer.fixed_mask = layer.mask()
    dx, pgrads = layer.backward(weights.copy())
    analytic = {"input": dx, **{f"param:{k}": v for k, v in pgrads.items()}}
    analytic = {k: np.asarray(v) * (1 + corrupt) for k, v in analytic.items()}
    sizes = {"input": x.size, **{f"param:{k}": layer.params[k].size for k in pgrads}}

    def change(name, i, v):
        if name == "input":
            d = np.zeros_like(x)
            d.reshape(-1)[i] = v
            return float(np.sum(weights * layer.delta(d)))
        return float(np.sum(weights * layer.delta(None, (name.split(":", 1)[1], i, v))))

    return check_gradients(change, analytic, sizes, step=step, max_entries=max_entries, rng=Rng(seed))
