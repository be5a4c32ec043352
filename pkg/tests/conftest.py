import numpy as np
import pytest

from marginlab import _kernels
from marginlab.margin import LinearHead


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # one-time JIT compile so individual test timings stay meaningful
    _kernels.warmup()


@pytest.fixture
def nprng():
    return np.random.default_rng(20260810)


def random_head(rng, k=None, d=None, scale=1.0) -> LinearHead:
    k = k if k is not None else int(rng.integers(2, 8))
    d = d if d is not None else int(rng.integers(1, 10))
    return LinearHead(
        W=scale * rng.standard_normal((k, d)),
        b=scale * rng.standard_normal(k),
    )
