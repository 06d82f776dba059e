"""Random Fourier features for the RBF kernel and mean map embeddings.

Frequencies are always stored as standard-normal draws; the bandwidth
enters through a log-scale ``a`` so that the effective frequency matrix is
``exp(a) * omegas`` (``a = -ln sigma`` for an RBF kernel of width sigma).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .tensor import F64, Rng, derive_seed, gaussian, load_tensor, save_tensor, uniform

NORMALIZATIONS = ("unbiased", "layer")


@dataclass
class RffBasis:
    omegas: np.ndarray
    offsets: np.ndarray
    log_scale: float = 0.0
    normalization: str = "unbiased"
    seed: int | None = None

    def __post_init__(self):
        self.omegas = np.asarray(self.omegas)
        if self.omegas.ndim != 2 or min(self.omegas.shape) < 1:
            raise ValueError(f"omegas must be a non-empty D x m matrix, got {self.omegas.shape}")
        offsets = np.array(self.offsets, dtype=self.omegas.dtype)
        if offsets.shape != (self.omegas.shape[0],):
            raise ValueError(f"need {self.omegas.shape[0]} offsets, got {offsets.shape}")
        if np.any(offsets < 0) or np.any(offsets >= 2 * np.pi):
            raise ValueError("offsets must lie in [0, 2*pi)")
        offsets.flags.writeable = False
        self.offsets = offsets
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        self.log_scale = float(self.log_scale)

    @property
    def D(self) -> int:
        return self.omegas.shape[0]

    @property
    def m(self) -> int:
        return self.omegas.shape[1]

    @property
    def sigma(self) -> float:
        return float(np.exp(-self.log_scale))

    @property
    def constant(self) -> float:
        return float(np.sqrt(2.0 / self.D)) if self.normalization == "unbiased" else 1.0

    def frequencies(self) -> np.ndarray:
        """Effective frequency matrix ``exp(a) * omegas``."""
        return self.omegas * np.exp(self.log_scale)

    def baked(self) -> "RffBasis":
        """Same map with the scale folded into the frequencies and ``a = 0``."""
        return RffBasis(self.frequencies(), self.offsets, 0.0, self.normalization, self.seed)

    def with_normalization(self, normalization: str) -> "RffBasis":
        return RffBasis(self.omegas, self.offsets, self.log_scale, normalization, self.seed)


def sample_basis(rng: Rng, D: int, m: int, sigma: float,
                 normalization: str = "unbiased", dtype=F64) -> RffBasis:
    """Draw ``omegas ~ N(0, I)`` and offsets ``~ U[0, 2 pi)`` for an RBF kernel of
    width ``sigma``."""
    if D < 1 or m < 1:
        raise ValueError("D and m must be >= 1")
    if not (np.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    omegas = gaussian(rng, (D, m), 0.0, 1.0, dtype=dtype)
    offsets = uniform(rng, (D,), 0.0, 2 * np.pi, dtype=dtype)
    return RffBasis(omegas, offsets, -np.log(sigma), normalization, rng.seed)


def rbf_exact(x, y, sigma: float) -> float:
    x = np.asarray(x, dtype=F64)
    y = np.asarray(y, dtype=F64)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = x - y
    return float(np.exp(-np.dot(d, d) / (2 * sigma**2)))


def features(basis: RffBasis, x) -> np.ndarray:
    """Random feature map; ``x`` is one point (m,) or a batch (n, m)."""
    x = np.asarray(x)
    if x.shape[-1] != basis.m:
        raise ValueError(f"point dimension {x.shape[-1]} != basis dimension {basis.m}")
    return basis.constant * np.cos(x @ basis.frequencies().T + basis.offsets)


@dataclass
class MeanMapEmbedding:
    values: np.ndarray
    sample_count: int


def embed(basis: RffBasis, samples) -> MeanMapEmbedding:
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ValueError(f"samples must be an n x m matrix, got shape {samples.shape}")
    if samples.shape[0] < 1:
        raise ValueError("cannot embed an empty sample set")
    return MeanMapEmbedding(features(basis, samples).mean(axis=0), samples.shape[0])


def inner(embedding: MeanMapEmbedding, psi) -> float:
    psi = np.asarray(psi)
    if psi.shape != embedding.values.shape:
        raise ValueError(f"psi shape {psi.shape} != embedding shape {embedding.values.shape}")
    return float(embedding.values @ psi)


@dataclass
class RkhsFunction:
    """Finite kernel expansion ``f(x) = sum_l weights[l] * K(anchors[l], x)``."""

    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=F64).reshape(-1)
        self.anchors = np.asarray(self.anchors, dtype=F64)
        if self.anchors.ndim != 2:
            raise ValueError("anchors must be an L x m matrix")
        if self.anchors.shape[0] != self.weights.size:
            raise ValueError(f"{self.weights.size} weights for {self.anchors.shape[0]} anchors")

    def __add__(self, other: "RkhsFunction") -> "RkhsFunction":
        return RkhsFunction(np.concatenate([self.weights, other.weights]),
                            np.concatenate([self.anchors, other.anchors]))

    def scaled(self, c: float) -> "RkhsFunction":
        return RkhsFunction(c * self.weights, self.anchors)

    def exact(self, x, sigma: float) -> float:
        return float(sum(a * rbf_exact(xl, x, sigma) for a, xl in zip(self.weights, self.anchors)))


def psi_of(basis: RffBasis, f: RkhsFunction) -> np.ndarray:
    """Primal-space representer ``sum_l alpha_l z(x_l)`` of ``f``."""
    if f.weights.size == 0:
        return np.zeros(basis.D)
    if f.anchors.shape[1] != basis.m:
        raise ValueError(f"anchor dimension {f.anchors.shape[1]} != basis dimension {basis.m}")
    return f.weights @ features(basis, f.anchors)


def oracle_inner(basis: RffBasis, f: RkhsFunction, samples) -> float:
    """Brute-force ``(1/n) sum_j sum_l alpha_l <z(X_j), z(x_l)>``, one pair at a time."""
    samples = np.asarray(samples, dtype=F64)
    total = 0.0
    for xj in samples:
        zj = features(basis, xj)
        for alpha, xl in zip(f.weights, f.anchors):
            zl = features(basis, xl)
            total += alpha * float(np.sum(zj * zl))
    return total / samples.shape[0]


def mme_distance(e1: MeanMapEmbedding, e2: MeanMapEmbedding) -> float:
    if e1.values.shape != e2.values.shape:
        raise ValueError("embeddings have different dimensions")
    return float(np.linalg.norm(e1.values - e2.values))


def median_heuristic(points, rng: Rng | None = None, max_points: int = 256) -> float:
    """Median pairwise Euclidean distance over a random subsample of rows."""
    points = np.asarray(points, dtype=F64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] > max_points:
        rng = rng or Rng(0)
        points = points[rng.generator.choice(points.shape[0], max_points, replace=False)]
    if points.shape[0] < 2:
        return 1.0
    dist = pdist(points)
    med = float(np.median(dist))
    if med > 0:
        return med
    # degenerate: many duplicates; fall back to the mean non-zero distance
    pos = dist[dist > 0]
    return float(pos.mean()) if pos.size else 1.0


def permutation_test(basis: RffBasis, a, b, shuffles: int = 200, rng: Rng | None = None):
    """MME distance between two sample sets and its permutation-null draws."""
    a = np.asarray(a, dtype=F64)
    b = np.asarray(b, dtype=F64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    observed = mme_distance(embed(basis, a), embed(basis, b))
    pooled_z = features(basis, np.concatenate([a, b]))
    n = a.shape[0]
    gen = (rng or Rng(0)).generator
    null = np.empty(shuffles)
    for s in range(shuffles):
        perm = gen.permutation(pooled_z.shape[0])
        null[s] = np.linalg.norm(pooled_z[perm[:n]].mean(0) - pooled_z[perm[n:]].mean(0))
    return observed, null


def approximation_errors(D: int, trials: int, sigma: float = 1.0, dim: int = 8,
                         seed: int = 0) -> np.ndarray:
    """``|z(x).z(y) - K(x, y)|`` for ``trials`` random pairs, each with a fresh
    unbiased basis. Points are drawn so that ``|x - y|`` is of order ``sigma``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    errs = np.empty(trials)
    for t in range(trials):
        rng = Rng(derive_seed(seed, "bench", D, t))
        x, y = gaussian(rng, (2, dim), std=sigma / np.sqrt(dim))
        basis = sample_basis(rng, D, dim, sigma)
        errs[t] = abs(features(basis, x) @ features(basis, y) - rbf_exact(x, y, sigma))
    return errs


def save_basis(directory, basis: RffBasis) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "omegas.dmmt", basis.omegas)
    save_tensor(d / "offsets.dmmt", np.ascontiguousarray(basis.offsets))
    save_tensor(d / "log_scale.dmmt", np.array([basis.log_scale], dtype=F64))
    meta = {"normalization": basis.normalization, "seed": basis.seed}
    (d / "basis.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_basis(directory) -> RffBasis:
    d = Path(directory)
    meta = json.loads((d / "basis.json").read_text())
    return RffBasis(
        load_tensor(d / "omegas.dmmt"),
        load_tensor(d / "offsets.dmmt"),
        float(load_tensor(d / "log_scale.dmmt")[0]),
        meta["normalization"],
        meta["seed"],
    )
