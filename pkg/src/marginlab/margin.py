"""Margin geometry for a multi-class linear scoring head.

Scores are s_j(x) = w_j . x + b_j. The decision boundary that matters
between classes p and q is where their scores tie, and the signed distance
of a point to that boundary is

    ((w_p - w_q) . x + (b_p - b_q)) / ||w_p - w_q||.

The minimal margin score (MMS) of a row of scores is that distance for the
top-two scoring classes; it never looks at labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import top2_pairnorm
from .errors import ShapeError
from .numkernel import (
    as_mat,
    as_vec,
    l2_norm,
    matmul,
    seq_sum,
    top2_tiebreak_low,
)

# Below this weight-difference norm the two classifiers are parallel and no
# boundary exists between them.
DEGENERATE_NORM_EPS = 1e-12


@dataclass
class LinearHead:
    """Last-layer weights: row j of W and entry j of b score class j."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = as_mat(self.W)
        self.b = as_vec(self.b)
        if self.W.shape[0] < 2:
            raise ShapeError(f"head needs >= 2 classes, got {self.W.shape[0]}")
        if self.W.shape[1] < 1:
            raise ShapeError("head needs feature dim >= 1")
        if self.b.shape[0] != self.W.shape[0]:
            raise ShapeError(
                f"bias length {self.b.shape[0]} != class count {self.W.shape[0]}"
            )
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise ValueError("head parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class MarginRecord:
    """Per-sample margin summary: top-two classes, raw gap, and MMS."""

    sample_index: int
    j1: int
    j2: int
    xi: float
    mms: float
    boundary_exists: bool


def score_batch(head: LinearHead, features) -> np.ndarray:
    """Scores S[i, j] = w_j . phi_i + b_j for a batch of feature rows."""
    features = as_mat(features)
    if features.shape[1] != head.feat_dim:
        raise ShapeError(
            f"features dim {features.shape[1]} != head dim {head.feat_dim}"
        )
    scores = matmul(features, head.W.T)
    scores += head.b
    return scores


def predict(scores) -> np.ndarray:
    """Per-row argmax class, smallest index on ties."""
    scores = as_mat(scores)
    return np.argmax(scores, axis=1).astype(np.int64)


def competitive_class(scores_row, y: int) -> int:
    """Highest-scoring class other than y."""
    scores_row = as_vec(scores_row)
    if scores_row.size < 2:
        raise ShapeError("competitive class needs >= 2 classes")
    masked = scores_row.copy()
    masked[y] = -np.inf
    return int(np.argmax(masked))


def score_gap(scores_row, y: int) -> float:
    """xi = s_y - s_m; positive iff the true class wins with a margin."""
    scores_row = as_vec(scores_row)
    m = competitive_class(scores_row, y)
    return float(scores_row[y] - scores_row[m])


def _signed_ratio(num: float, den: float) -> float:
    if den < DEGENERATE_NORM_EPS:
        if num > 0.0:
            return math.inf
        if num < 0.0:
            return -math.inf
        return 0.0
    return num / den


def pairwise_distance(head: LinearHead, x, p: int, q: int) -> float:
    """Signed distance of x to the boundary where classes p and q tie.

    Degenerate boundary (w_p ~ w_q): returns +/-inf by the sign of the
    score difference, 0 when the scores tie as well.
    """
    if p == q:
        raise ValueError(f"pairwise distance needs distinct classes, got p=q={p}")
    x = as_vec(x)
    if x.shape[0] != head.feat_dim:
        raise ShapeError(f"point dim {x.shape[0]} != head dim {head.feat_dim}")
    dw = head.W[p] - head.W[q]
    num = seq_sum(dw * x) + (head.b[p] - head.b[q])
    return _signed_ratio(num, l2_norm(dw))


def one_vs_all_distance(head: LinearHead, x, j: int) -> float:
    """Signed distance of x to the one-vs-all boundary w_j . x + b_j = 0."""
    x = as_vec(x)
    if x.shape[0] != head.feat_dim:
        raise ShapeError(f"point dim {x.shape[0]} != head dim {head.feat_dim}")
    num = seq_sum(head.W[j] * x) + head.b[j]
    return _signed_ratio(num, l2_norm(head.W[j]))


def mms(scores_row, head: LinearHead, sample_index: int = 0) -> MarginRecord:
    """Minimal margin score of one row: distance between the top-two classes.

    Label-free by construction. A degenerate pairwise boundary gives
    mms = +inf so the sample is never treated as uncertain.
    """
    scores_row = as_vec(scores_row)
    if scores_row.size != head.n_classes:
        raise ShapeError(
            f"scores length {scores_row.size} != class count {head.n_classes}"
        )
    j1, j2 = top2_tiebreak_low(scores_row)
    gap = float(scores_row[j1] - scores_row[j2])
    wn = l2_norm(head.W[j1] - head.W[j2])
    if wn < DEGENERATE_NORM_EPS:
        return MarginRecord(sample_index, j1, j2, gap, math.inf, False)
    return MarginRecord(sample_index, j1, j2, gap, gap / wn, True)


def mms_batch(scores, head: LinearHead):
    """Vectorized MMS over a score matrix.

    Returns (j1, j2, gap, mms_values, boundary_exists) arrays; bit-identical
    to calling :func:`mms` row by row.
    """
    scores = as_mat(scores)
    if scores.shape[1] != head.n_classes:
        raise ShapeError(
            f"score cols {scores.shape[1]} != class count {head.n_classes}"
        )
    j1, j2, gap, wnorm = top2_pairnorm(scores, head.W)
    exists = wnorm >= DEGENERATE_NORM_EPS
    vals = np.empty_like(gap)
    np.divide(gap, wnorm, out=vals, where=exists)
    vals[~exists] = np.inf
    return j1, j2, gap, vals, exists


def normalized_feature_margin(
    head: LinearHead, phi, y: int, phi_max_norm: float
) -> float:
    """Feature-space pairwise margin of phi for label y, scaled by the batch
    radius so a uniform blow-up of the feature space cannot inflate it."""
    if phi_max_norm <= 0.0:
        raise ValueError(f"phi_max_norm must be positive, got {phi_max_norm}")
    phi = as_vec(phi)
    scores = score_batch(head, phi[None, :])[0]
    m = competitive_class(scores, y)
    return pairwise_distance(head, phi, y, m) / phi_max_norm
