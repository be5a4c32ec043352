"""Per-step batch selection: keep the candidates closest to a decision
boundary (smallest MMS), or a uniform random subset as the baseline."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .margin import LinearHead, mms_batch
from .numkernel import RngStream, as_mat, seq_sum, sort_indices_asc


class SelectionMode(str, Enum):
    RANDOM = "random"
    MMS = "mms"


@dataclass(frozen=True)
class SelectionConfig:
    mode: SelectionMode
    big_batch: int
    small_batch: int

    def __post_init__(self):
        if not 1 <= self.small_batch <= self.big_batch:
            raise ValueError(
                f"need 1 <= small_batch <= big_batch, got "
                f"{self.small_batch}/{self.big_batch}"
            )


@dataclass
class SelectionResult:
    indices: np.ndarray  # positions into the candidate batch
    mms_values: np.ndarray  # per selected sample; empty for random mode
    mean_mms: float | None


def select_mms(scores, head: LinearHead, b: int) -> SelectionResult:
    """The b candidates with smallest MMS, stable ascending (+inf rows last).

    Label-free: nothing here can see targets. mean_mms averages the selected
    values, so a selected degenerate (+inf) row propagates to +inf.
    """
    scores = as_mat(scores)
    n = scores.shape[0]
    if not 1 <= b <= n:
        raise ValueError(f"need 1 <= b <= batch size, got b={b}, batch={n}")
    _, _, _, vals, _ = mms_batch(scores, head)
    order = sort_indices_asc(vals)
    idx = order[:b].astype(np.int64)
    selected = vals[idx]
    return SelectionResult(
        indices=idx,
        mms_values=selected,
        mean_mms=float(seq_sum(selected)) / b,
    )


def select_random(big_batch: int, b: int, rng: RngStream) -> SelectionResult:
    """b distinct positions uniform without replacement (partial Fisher-Yates).

    b == B keeps the whole batch in natural order and draws nothing, so
    that case reduces exactly to plain minibatch SGD.
    """
    if not 1 <= b <= big_batch:
        raise ValueError(f"need 1 <= b <= B, got b={b}, B={big_batch}")
    pool = np.arange(big_batch, dtype=np.int64)
    if b == big_batch:
        return SelectionResult(indices=pool, mms_values=np.empty(0), mean_mms=None)
    for i in range(b):
        j = i + rng.randint_below(big_batch - i)
        pool[i], pool[j] = pool[j], pool[i]
    return SelectionResult(
        indices=pool[:b].copy(),
        mms_values=np.empty(0),
        mean_mms=None,
    )
