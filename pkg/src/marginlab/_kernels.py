"""Hot numeric kernels with twin implementations: numba @njit and pure numpy.

The backend is picked once at import time from the MARGINLAB_BACKEND
environment variable ("numba" or "numpy"; unset means numba when importable,
numpy otherwise).

Both paths accumulate strictly left-to-right (row-major), so they produce
bit-identical float64 results: the numba kernels are plain sequential loops
and the numpy fallbacks reduce via cumsum, which numpy evaluates as a
sequential recurrence. Keeping the summation order pinned is what makes
training runs bit-reproducible.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

# Rows per block in the numpy matmul fallback; bounds the (rows, n, p)
# scratch product tensor.
_BLOCK_ELEMS = 1 << 22


def _matmul_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, n = a.shape
    p = b.shape[1]
    out = np.empty((m, p))
    block = max(1, _BLOCK_ELEMS // max(1, n * p))
    for i0 in range(0, m, block):
        blk = a[i0 : i0 + block, :, None] * b[None, :, :]
        np.cumsum(blk, axis=1, out=blk)
        out[i0 : i0 + block] = blk[:, -1, :]
    return out


def _top2_pairnorm_numpy(scores: np.ndarray, w: np.ndarray):
    m = scores.shape[0]
    rows = np.arange(m)
    j1 = np.argmax(scores, axis=1)
    masked = scores.copy()
    masked[rows, j1] = -np.inf
    j2 = np.argmax(masked, axis=1)
    gap = scores[rows, j1] - scores[rows, j2]
    diff = w[j1] - w[j2]
    diff *= diff
    wnorm = np.sqrt(np.cumsum(diff, axis=1)[:, -1])
    return j1.astype(np.int64), j2.astype(np.int64), gap, wnorm


try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    _HAS_NUMBA = False


if _HAS_NUMBA:

    @njit(cache=True)
    def _matmul_numba(a, b):
        m, n = a.shape
        p = b.shape[1]
        out = np.empty((m, p))
        for i in range(m):
            for j in range(p):
                acc = 0.0
                for l in range(n):
                    acc += a[i, l] * b[l, j]
                out[i, j] = acc
        return out

    @njit(cache=True)
    def _top2_pairnorm_numba(scores, w):
        m, k = scores.shape
        d = w.shape[1]
        j1 = np.empty(m, np.int64)
        j2 = np.empty(m, np.int64)
        gap = np.empty(m)
        wnorm = np.empty(m)
        for i in range(m):
            b1 = 0
            for j in range(1, k):
                if scores[i, j] > scores[i, b1]:
                    b1 = j
            b2 = -1
            for j in range(k):
                if j == b1:
                    continue
                if b2 < 0 or scores[i, j] > scores[i, b2]:
                    b2 = j
            j1[i] = b1
            j2[i] = b2
            gap[i] = scores[i, b1] - scores[i, b2]
            acc = 0.0
            for l in range(d):
                t = w[b1, l] - w[b2, l]
                acc += t * t
            wnorm[i] = np.sqrt(acc)
        return j1, j2, gap, wnorm

else:  # pragma: no cover
    _matmul_numba = None
    _top2_pairnorm_numba = None


def _pick_backend() -> str:
    raw = os.environ.get("MARGINLAB_BACKEND", "").strip().lower()
    if raw == "":
        return "numba" if _HAS_NUMBA else "numpy"
    if raw not in ("numba", "numpy"):
        raise ConfigError(
            f"MARGINLAB_BACKEND must be 'numba' or 'numpy', got {raw!r}"
        )
    if raw == "numba" and not _HAS_NUMBA:
        raise ConfigError("MARGINLAB_BACKEND=numba but numba is not importable")
    return raw


BACKEND = _pick_backend()

if BACKEND == "numba":
    matmul_raw = _matmul_numba
    top2_pairnorm = _top2_pairnorm_numba
else:
    matmul_raw = _matmul_numpy
    top2_pairnorm = _top2_pairnorm_numpy


def warmup() -> None:
    """Trigger JIT compilation so timings and test runtimes are stable."""
    a = np.ones((2, 3))
    b = np.ones((3, 2))
    matmul_raw(a, b)
    top2_pairnorm(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 3)))
