"""Dense array helpers, seeded random streams and the binary tensor format.

Tensors are plain :class:`numpy.ndarray` objects in row-major order with
channel-first image layout ``[channels, height, width]`` (plus an optional
leading batch axis). Two widths are used: float64 for gradient checks and
oracles, float32 for training.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

F32 = np.float32
F64 = np.float64

_MAGIC = b"DMMT"
_VERSION = 1
_DTYPE_CODES = {np.dtype(F32): 0, np.dtype(F64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ValueError("shape must have at least one dimension")
    if any(s < 1 for s in shape):
        raise ValueError(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=F64) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply ``add``, ``sub`` or ``mul`` to two equally shaped arrays.

    No broadcasting is performed; shapes must match exactly.
    """
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_ELEMENTWISE)}")
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return _ELEMENTWISE[op](a, b)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects two matrices")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


def reduce_mean(a: np.ndarray, axes) -> np.ndarray:
    a = np.asarray(a)
    axes = tuple(int(ax) for ax in axes)
    norm = tuple(ax % a.ndim for ax in axes)
    if len(set(norm)) != len(norm):
        raise ValueError(f"duplicate axes in {axes}")
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise ValueError(f"axis {ax} out of range for rank {a.ndim}")
    return a.mean(axis=norm)


def derive_seed(master_seed: int, *parts) -> int:
    """Hash a master seed and a path of names/indices into a 64-bit sub-seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master_seed)).encode())
    for part in parts:
        h.update(b"\x00")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Built on the Philox generator so that distinct stream ids give
    non-overlapping, reproducible sequences. An instance has a single owner;
    concurrent users need their own stream ids.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._bitgen = np.random.Philox(key=[self.seed, self.stream])
        self.generator = np.random.Generator(self._bitgen)

    def spawn(self, *parts) -> "Rng":
        """A new stream derived from this one's seed and a name path."""
        return Rng(derive_seed(self.seed, self.stream, *parts))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


def gaussian(rng: Rng, shape, mean: float = 0.0, std: float = 1.0, dtype=F64) -> np.ndarray:
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    out = rng.generator.normal(mean, std, size=_check_shape(shape))
    return out.astype(dtype, copy=False)


def uniform(rng: Rng, shape, lo: float = 0.0, hi: float = 1.0, dtype=F64) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi})")
    out = rng.generator.uniform(lo, hi, size=_check_shape(shape)).astype(dtype, copy=False)
    # keep the upper bound open after rounding to the target width
    top = np.asarray(hi, dtype=dtype)
    while top >= hi:
        top = np.nextafter(top, np.asarray(lo, dtype=dtype))
    return np.minimum(out, top)


def tensor_to_bytes(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    if a.dtype not in _DTYPE_CODES:
        raise TypeError(f"unsupported dtype {a.dtype}; only float32/float64")
    code = _DTYPE_CODES[a.dtype]
    header = _MAGIC + struct.pack("<BBI", _VERSION, code, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + np.ascontiguousarray(a, dtype=_CODE_DTYPES[code]).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != _MAGIC:
        raise ValueError("not a DMMT tensor (bad magic)")
    version, code, rank = struct.unpack_from("<BBI", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported tensor format version {version}")
    if code not in _CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    offset = 4 + struct.calcsize("<BBI")
    dims = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(buf) != expected:
        raise ValueError(f"truncated or oversized tensor payload: {len(buf)} != {expected}")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)


def save_tensor(path, a: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(a))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
