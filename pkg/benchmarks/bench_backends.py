"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the two hot kernels on training-shaped inputs, then a full training
run under each backend (subprocess, since the backend is fixed at import).

    python3 benchmarks/bench_backends.py
"""

import os
import subprocess
import sys
import time

import numpy as np

from marginlab import _kernels

MATMUL_SHAPES = [
    (640, 2, 32),  # candidate batch through a small hidden layer
    (640, 32, 4),  # hidden features to class scores
    (64, 32, 32),  # backprop on the kept batch
    (256, 64, 10),
]


def bench(fn, *args, repeat=200):
    fn(*args)  # warm (JIT compile / allocator)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels():
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for m, n, p in MATMUL_SHAPES:
        a = rng.standard_normal((m, n))
        b = rng.standard_normal((n, p))
        t_np = bench(_kernels._matmul_numpy, a, b)
        t_nb = bench(_kernels._matmul_numba, a, b)
        assert np.array_equal(_kernels._matmul_numpy(a, b), _kernels._matmul_numba(a, b))
        label = f"matmul {m}x{n} @ {n}x{p}"
        print(f"{label:<28} {t_np * 1e6:>9.1f}u {t_nb * 1e6:>9.1f}u {t_np / t_nb:>7.1f}x")
    scores = rng.standard_normal((640, 10))
    w = rng.standard_normal((10, 32))
    t_np = bench(_kernels._top2_pairnorm_numpy, scores, w)
    t_nb = bench(_kernels._top2_pairnorm_numba, scores, w)
    print(f"{'top2+pairnorm 640x10':<28} {t_np * 1e6:>9.1f}u {t_nb * 1e6:>9.1f}u {t_np / t_nb:>7.1f}x")


TRAIN_SNIPPET = """
import time
from marginlab.data import SyntheticSpec, SplitSpec, gen_synthetic, split
from marginlab.harness import TrainConfig, train_run
from marginlab.objective import AlphaSchedule, RegKind, RiskKind
from marginlab.selector import SelectionConfig, SelectionMode

ds = gen_synthetic(SyntheticSpec.blobs(
    centers=[[0,0],[3,0],[0,3],[3,3]], n_per_class=400, sigma=0.5, seed=1))
tr, va = split(ds, SplitSpec(0.4, 1))
cfg = TrainConfig(
    dims=(2,32,4), activations=("relu",), total_steps=200, lr_base=0.001,
    risk=RiskKind.CROSS_ENTROPY, reg=RegKind.PMM, alpha=AlphaSchedule.constant(1e-4),
    selection=SelectionConfig(SelectionMode.MMS, 640, 64), seed=1, eval_every=200)
train_run(cfg, tr, va)  # warm any JIT outside the timed region
t0 = time.perf_counter()
train_run(cfg, tr, va)
print(f"{time.perf_counter() - t0:.3f}")
"""


def bench_train():
    print()
    print("end-to-end: 200 MMS-selection steps, MLP 2-32-4, B=640, b=64")
    results = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, MARGINLAB_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True
        )
        if out.returncode != 0:
            print(f"  {backend}: failed\n{out.stderr}")
            return
        results[backend] = float(out.stdout.strip())
        print(f"  {backend:<6} {results[backend]:.3f}s")
    print(f"  speedup {results['numpy'] / results['numba']:.1f}x")


if __name__ == "__main__":
    print(f"active backend: {_kernels.BACKEND}")
    if not _kernels._HAS_NUMBA:
        print("numba unavailable; nothing to compare")
        sys.exit(0)
    bench_kernels()
    bench_train()
