"""The mean map layer: 1x1 frequency convolution, cosine, global average pooling.

For a feature grid ``C`` of shape (m, h, w) the layer outputs the D-vector

    out[d] = mean_{j,l} cos(exp(a) * omega_d . C[:, j, l] + b_d)

which is the random-feature mean embedding of the h*w column vectors of C
(with the feature constant dropped; downstream linear layers absorb it).
"""

from __future__ import annotations

import numpy as np

from .kernels import RffBasis, median_heuristic, sample_basis
from .layers import Layer, conv2d, cos_delta, global_avg_pool
from .tensor import F64, Rng


def extract_feature_set(C) -> np.ndarray:
    """Rows are the m-dimensional column vectors of ``C``, positions in row-major order."""
    C = np.asarray(C)
    if C.ndim != 3:
        raise ValueError(f"expected an m x h x w tensor, got shape {C.shape}")
    m = C.shape[0]
    return C.reshape(m, -1).T


class MeanMapLayer(Layer):
    """Mean map embedding of the spatial columns of a feature grid.

    ``omega`` (D x m) and ``log_scale`` (shape (1,)) are trainable when
    ``learn_frequencies`` / ``learn_scale`` are set. ``offsets`` never are.
    """

    kind = "meanmap"

    def __init__(self, omega, offsets, log_scale, learn_frequencies: bool = False,
                 learn_scale: bool = True):
        super().__init__()
        omega = np.asarray(omega)
        log_scale = np.asarray(log_scale, dtype=omega.dtype).reshape(1)
        if np.shape(offsets) != (omega.shape[0],):
            raise ValueError("one offset per frequency required")
        self.params = {"omega": omega, "offsets": offsets, "log_scale": log_scale}
        self.learn_frequencies = learn_frequencies
        self.learn_scale = learn_scale
        self.trainable = tuple(
            name for name, on in (("omega", learn_frequencies), ("log_scale", learn_scale)) if on
        )

    @classmethod
    def from_basis(cls, basis: RffBasis, learn_frequencies=False, learn_scale=True, dtype=None):
        dtype = dtype or basis.omegas.dtype
        return cls(basis.omegas.astype(dtype), np.array(basis.offsets, dtype=dtype),
                   np.array([basis.log_scale], dtype=dtype), learn_frequencies, learn_scale)

    @classmethod
    def sample(cls, rng: Rng, D: int, m: int, sigma: float = 1.0, **kw):
        return cls.from_basis(sample_basis(rng, D, m, sigma, normalization="layer"), **kw)

    @property
    def D(self) -> int:
        return self.params["omega"].shape[0]

    @property
    def basis(self) -> RffBasis:
        p = self.params
        return RffBasis(p["omega"].astype(F64), p["offsets"].astype(F64),
                        float(p["log_scale"][0]), "layer")

    def kernels(self) -> np.ndarray:
        W = self.params["omega"] * np.exp(self.params["log_scale"][0])
        return W[:, :, None, None]

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ValueError(f"expected a batch of m x h x w grids, got shape {x.shape}")
        if x.shape[1] != self.params["omega"].shape[1]:
            raise ValueError(f"input has {x.shape[1]} channels, layer expects {self.params['omega'].shape[1]}")
        if x.shape[2] * x.shape[3] == 0:
            raise ValueError("empty spatial grid")
        proj = conv2d(x, self.kernels(), self.params["offsets"])
        self._cache = (x, proj)
        return global_avg_pool(np.cos(proj))

    def backward(self, dout):
        x, proj = self._cached()
        hw = proj.shape[2] * proj.shape[3]
        # 64-bit accumulation regardless of activation width
        x64 = x.astype(F64, copy=False)
        W = self.kernels()[:, :, 0, 0].astype(F64)
        dproj = -np.sin(proj.astype(F64)) * (np.asarray(dout, dtype=F64) / hw)[:, :, None, None]
        dx = np.tensordot(dproj, W, axes=([1], [0])).transpose(0, 3, 1, 2)
        grads = {}
        if self.trainable:
            dW = np.tensordot(dproj, x64, axes=([0, 2, 3], [0, 2, 3]))
            dtype = self.params["omega"].dtype
            if self.learn_frequencies:
                grads["omega"] = (dW * np.exp(float(self.params["log_scale"][0]))).astype(dtype)
            if self.learn_scale:
                grads["log_scale"] = np.array([np.sum(dW * W)], dtype=dtype)
        return dx.astype(x.dtype, copy=False), grads

    def delta(self, d_in, param_delta=None):
        x, proj = self._cached()
        x64 = x.astype(F64, copy=False)
        W = self.kernels()[:, :, 0, 0].astype(F64)
        dproj = np.zeros(proj.shape)
        if d_in is not None:
            dproj += conv2d(d_in, W[:, :, None, None])
        if param_delta is not None:
            name, idx, v = param_delta
            if name == "omega":
                d, j = np.unravel_index(idx, W.shape)
                dproj[:, d] += v * np.exp(float(self.params["log_scale"][0])) * x64[:, j]
            elif name == "log_scale":
                dproj += np.expm1(v) * conv2d(x64, W[:, :, None, None])
            else:
                raise ValueError("offsets are fixed")
        return cos_delta(proj.astype(F64), dproj).mean(axis=(2, 3))

    def calibrate(self, features, rng: Rng | None = None) -> float:
        """Set ``log_scale = -ln sigma`` from the median heuristic over the
        spatial column vectors of a warm-up batch of features. Returns sigma."""
        features = np.asarray(features)
        cols = features.transpose(0, 2, 3, 1).reshape(-1, features.shape[1])
        sigma = median_heuristic(cols, rng)
        self.params["log_scale"][0] = -np.log(sigma)
        return sigma
