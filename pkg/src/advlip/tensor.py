"""Dense array primitives: seeded RNG streams, initialization, a checked
matrix product, a finite-difference gradient oracle, and the binary tensor
format used by checkpoints.

Arrays are plain numpy ndarrays, float32 for training and float64 where
gradient checks need the headroom.  They are treated as immutable values
once returned from a public function.
"""

from __future__ import annotations

import struct
from typing import Callable

import numpy as np

from .errors import DataIntegrityError, NumericalError, ShapeError

# Purpose-labelled RNG streams.  Keeping the labels fixed means two runs with
# the same seed draw identical values even if unrelated code adds draws to a
# different stream.
RNG_STREAMS = {"init": 1, "dropout": 2, "shuffle": 3, "synth": 4}

TENSOR_MAGIC = b"ADVT1"


class Rng:
    """Deterministic random stream identified by (seed, stream label).

    Identical (seed, stream, call sequence) yields identical values on all
    platforms.  An Rng is single-owner: hand each consumer its own instance
    instead of sharing one.
    """

    def __init__(self, seed: int, stream: str):
        if stream not in RNG_STREAMS:
            raise ValueError(f"unknown rng stream {stream!r}; expected one of {sorted(RNG_STREAMS)}")
        self.seed = int(seed)
        self.stream = stream
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(RNG_STREAMS[stream],))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def normal(self, shape, std=1.0):
        return self._gen.normal(0.0, std, size=shape)

    def random(self, shape=None):
        return self._gen.random(size=shape)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream!r})"


def derive_seed(base_seed: int, *parts: int) -> int:
    """Stable sub-seed for a named unit of work (e.g. one experiment cell)."""
    ss = np.random.SeedSequence(entropy=(int(base_seed),) + tuple(int(p) for p in parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericalError(f"{what} produced non-finite values")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Checked 2-D matrix product."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _check_finite(a @ b, "matmul")


def truncated_normal_init(shape, std: float, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Samples from N(0, std^2) with values beyond 2*std resampled.

    Matches the conventional truncated-normal initializer: the result is
    guaranteed to lie in [-2*std, 2*std].
    """
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    out = rng.normal(shape, std)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(int(bad.sum()), std)
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, elementwise.

    The test-side oracle for every analytic backward pass in this package.
    `f` must be pure; x is never mutated.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] = xf[i] + eps
        xm[i] = xf[i] - eps
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError("finite_diff_grad: objective returned a non-finite value")
        flat[i] = (fp - fm) / (2.0 * eps)
    return grad


def write_tensor(fh, a: np.ndarray) -> None:
    """Binary tensor record: magic, u8 rank, u32 LE dims, LE float32 data."""
    a = np.asarray(a, dtype=np.float32)
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<B", a.ndim))
    for d in a.shape:
        fh.write(struct.pack("<I", d))
    fh.write(a.astype("<f4").tobytes())


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(len(TENSOR_MAGIC))
    if magic != TENSOR_MAGIC:
        raise DataIntegrityError(f"bad magic: expected {TENSOR_MAGIC!r}, got {magic!r}")
    rank_raw = fh.read(1)
    if len(rank_raw) != 1:
        raise DataIntegrityError("truncated tensor header")
    (rank,) = struct.unpack("<B", rank_raw)
    dims = []
    for _ in range(rank):
        raw = fh.read(4)
        if len(raw) != 4:
            raise DataIntegrityError("truncated tensor dims")
        dims.append(struct.unpack("<I", raw)[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise DataIntegrityError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
