"""Float64 vector/matrix primitives and a seeded deterministic RNG.

Conventions used by the whole package:

* vectors are 1-D float64 ndarrays, matrices are 2-D row-major float64;
* every reduction runs left-to-right (see ``seq_sum``), so results are
  bit-reproducible and independent of the kernel backend;
* ties in argmax-style operations always resolve to the smallest index.

``RngStream`` is a SplitMix64 generator. The algorithm is pinned: integer
output, the uniform/gaussian mappings, and the derivation scheme must never
change, or seeded datasets and golden files stop reproducing.
"""

from __future__ import annotations

import math

import numpy as np

from ._kernels import matmul_raw
from .errors import ShapeError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def as_vec(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected 1-D vector, got shape {v.shape}")
    return v


def as_mat(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected 2-D matrix, got shape {a.shape}")
    return a


def seq_sum(x: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """Sum with pinned left-to-right order (cumsum recurrence, not pairwise)."""
    x = np.asarray(x, dtype=np.float64)
    if axis is None:
        flat = x.ravel()
        if flat.size == 0:
            return 0.0
        return float(np.cumsum(flat)[-1])
    if x.shape[axis] == 0:
        return np.zeros(x.shape[:axis] + x.shape[axis + 1 :])
    return np.take(np.cumsum(x, axis=axis), -1, axis=axis)


def matmul(a, b) -> np.ndarray:
    a = as_mat(a)
    b = as_mat(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return matmul_raw(a, b)


def l2_norm(v) -> float:
    v = as_vec(v)
    return math.sqrt(seq_sum(v * v))


def argmax_tiebreak_low(v) -> int:
    v = as_vec(v)
    if v.size < 1:
        raise ShapeError("argmax of empty vector")
    return int(np.argmax(v))


def top2_tiebreak_low(v) -> tuple[int, int]:
    """Indices of the two largest entries; ties go to the smaller index."""
    v = as_vec(v)
    if v.size < 2:
        raise ShapeError(f"top2 needs at least 2 entries, got {v.size}")
    j1 = int(np.argmax(v))
    masked = v.copy()
    masked[j1] = -np.inf
    j2 = int(np.argmax(masked))
    return j1, j2


def sort_indices_asc(v) -> np.ndarray:
    """Stable ascending argsort; equal values keep their original order."""
    v = as_vec(v)
    return np.argsort(v, kind="stable")


def softmax_stable(v) -> np.ndarray:
    v = as_vec(v)
    e = np.exp(v - np.max(v))
    return e / seq_sum(e)


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(base: int, *tags: int) -> int:
    """Stable sub-stream seed from a base seed and integer tags."""
    s = _mix64((base + _GOLDEN) & _MASK)
    for t in tags:
        s = _mix64(((s ^ (t & _MASK)) + _GOLDEN) & _MASK)
    return s


class RngStream:
    """SplitMix64 stream: same seed gives the same sequence on any platform.

    Gaussians come from Box-Muller on consecutive uniforms, with the second
    variate of each pair cached; this pairing is part of the pinned contract.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK
        self._gauss: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return _mix64(self._state)

    def next_float(self) -> float:
        # 53-bit uniform in [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def next_gaussian(self) -> float:
        if self._gauss is not None:
            g = self._gauss
            self._gauss = None
            return g
        # u1 in (0, 1] keeps log() finite
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = self.next_float()
        r = math.sqrt(-2.0 * math.log(u1))
        t = 2.0 * math.pi * u2
        self._gauss = r * math.sin(t)
        return r * math.cos(t)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def normal(self, shape) -> np.ndarray:
        out = np.empty(shape, dtype=np.float64)
        flat = out.ravel()
        for i in range(flat.size):
            flat[i] = self.next_gaussian()
        return out

    def randint_below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"randint_below needs n >= 1, got {n}")
        threshold = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < threshold:
                return u % n

    def shuffle(self, arr: np.ndarray) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(arr) - 1, 0, -1):
            j = self.randint_below(i + 1)
            arr[i], arr[j] = arr[j], arr[i]

    def permutation(self, n: int) -> np.ndarray:
        out = np.arange(n)
        self.shuffle(out)
        return out

    def get_state(self) -> tuple[int, float | None]:
        return self._state, self._gauss

    def set_state(self, state: tuple[int, float | None]) -> None:
        self._state = state[0] & _MASK
        self._gauss = state[1]
