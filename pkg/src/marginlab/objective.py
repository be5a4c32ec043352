"""Training objective: empirical risk plus margin regularization.

The batch objective is  total = alpha * sum_i R_i + sum_i C_i  where C_i is
hinge or cross-entropy risk and R_i depends on the regularizer kind. The
pairwise kind penalizes ||w_y - w_m||^2 * ||phi_max||^2 per sample, with m
the most competitive non-true class at the current scores and phi_max the
largest feature norm in the batch.

All gradients here are analytic; finite differences only appear in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError
from .margin import LinearHead, score_batch
from .numkernel import as_mat, matmul, seq_sum


class RiskKind(str, Enum):
    HINGE = "hinge"
    CROSS_ENTROPY = "cross_entropy"


class RegKind(str, Enum):
    NONE = "none"
    WEIGHT_DECAY = "weight_decay"
    ONE_VS_ALL_L2 = "one_vs_all_l2"
    PMM = "pmm"


class PhiMaxMode(str, Enum):
    # Whether the batch feature radius inside the pairwise regularizer is a
    # constant of the evaluation point or backpropagates into the network.
    STOP_GRADIENT = "stop_gradient"
    FLOW_GRADIENT = "flow_gradient"


@dataclass(frozen=True)
class ObjectiveConfig:
    risk: RiskKind = RiskKind.CROSS_ENTROPY
    reg: RegKind = RegKind.NONE
    weight_decay_coef: float = 5e-4
    phi_max_mode: PhiMaxMode = PhiMaxMode.STOP_GRADIENT


@dataclass(frozen=True)
class AlphaSchedule:
    """Regularization trade-off factor, constant or linear in the step."""

    kind: str
    a: float = 0.0
    a0: float = 0.0
    a1: float = 0.0
    total_steps: int = 1

    @classmethod
    def constant(cls, a: float) -> "AlphaSchedule":
        if a < 0.0:
            raise ValueError(f"alpha must be >= 0, got {a}")
        return cls(kind="constant", a=a)

    @classmethod
    def linear(cls, a0: float, a1: float, total_steps: int) -> "AlphaSchedule":
        if a0 < 0.0 or a1 < 0.0:
            raise ValueError("alpha endpoints must be >= 0")
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        return cls(kind="linear", a0=a0, a1=a1, total_steps=total_steps)


def alpha_at(schedule: AlphaSchedule, step: int) -> float:
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if schedule.kind == "constant":
        return schedule.a
    frac = min(step, schedule.total_steps) / schedule.total_steps
    return schedule.a0 + (schedule.a1 - schedule.a0) * frac


@dataclass
class ObjectiveValue:
    risk_sum: float
    reg_sum: float
    total: float
    alpha_used: float


@dataclass
class GradientSet:
    """Gradients of the total objective w.r.t. head weights, head biases,
    and the per-sample input features."""

    dW: np.ndarray
    db: np.ndarray
    dPhi: np.ndarray


def hinge_risk(xi: float) -> float:
    return max(0.0, 1.0 - xi)


def ce_risk(scores_row, y: int) -> float:
    scores_row = np.asarray(scores_row, dtype=np.float64)
    m = float(np.max(scores_row))
    lse = m + np.log(seq_sum(np.exp(scores_row - m)))
    return float(lse - scores_row[y])


def pmm_reg(head: LinearHead, y: int, m: int, phi_max_norm_sq: float) -> float:
    """Pairwise term ||w_y - w_m||^2 * ||phi_max||^2 for one sample."""
    if y == m:
        raise ValueError(f"pairwise regularizer needs y != m, got {y}")
    if phi_max_norm_sq < 0.0:
        raise ValueError("phi_max_norm_sq must be >= 0")
    d = head.W[y] - head.W[m]
    return seq_sum(d * d) * phi_max_norm_sq


def ova_reg(head: LinearHead) -> float:
    """Sum of squared row norms of W (the one-vs-all margin penalty)."""
    return seq_sum(head.W * head.W)


def head_sq_sum(head: LinearHead) -> float:
    """Square sum over every head parameter (weights then biases)."""
    return seq_sum(head.W * head.W) + seq_sum(head.b * head.b)


def phi_max_norm(features) -> tuple[float, int]:
    """Largest row norm in the batch and the first row achieving it."""
    features = as_mat(features)
    if features.shape[0] < 1:
        raise ShapeError("phi_max of an empty batch")
    sq = _row_sq_norms(features)
    idx = int(np.argmax(sq))
    return float(np.sqrt(sq[idx])), idx


def _row_sq_norms(features: np.ndarray) -> np.ndarray:
    sq = features * features
    return np.cumsum(sq, axis=1)[:, -1]


def _competitive_rows(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    masked = scores.copy()
    masked[np.arange(scores.shape[0]), labels] = -np.inf
    return np.argmax(masked, axis=1).astype(np.int64)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores, axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = np.cumsum(e, axis=1)[:, -1]
    return e / denom[:, None]


def _check_batch(head: LinearHead, features: np.ndarray, labels: np.ndarray):
    features = as_mat(features)
    labels = np.asarray(labels)
    if features.shape[1] != head.feat_dim:
        raise ShapeError(
            f"features dim {features.shape[1]} != head dim {head.feat_dim}"
        )
    if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch {features.shape[0]}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= head.n_classes):
        raise ValueError("label out of range")
    return features, labels.astype(np.int64)


def _risk_terms(scores, labels, risk: RiskKind):
    n = scores.shape[0]
    rows = np.arange(n)
    if risk == RiskKind.CROSS_ENTROPY:
        mx = np.max(scores, axis=1)
        lse = mx + np.log(np.cumsum(np.exp(scores - mx[:, None]), axis=1)[:, -1])
        return lse - scores[rows, labels]
    comp = _competitive_rows(scores, labels)
    xi = scores[rows, labels] - scores[rows, comp]
    return np.maximum(0.0, 1.0 - xi)


def objective_batch(
    head: LinearHead, features, labels, cfg: ObjectiveConfig, alpha: float
) -> ObjectiveValue:
    """Evaluate risk_sum, reg_sum, and total = alpha*reg_sum + risk_sum.

    Weight decay here covers only the head parameters; decay over body
    parameters is the trainer's business.
    """
    features, labels = _check_batch(head, features, labels)
    scores = score_batch(head, features)
    risk_sum = float(seq_sum(_risk_terms(scores, labels, cfg.risk)))

    if cfg.reg == RegKind.NONE:
        reg_sum = 0.0
    elif cfg.reg == RegKind.WEIGHT_DECAY:
        reg_sum = cfg.weight_decay_coef * head_sq_sum(head)
    elif cfg.reg == RegKind.ONE_VS_ALL_L2:
        reg_sum = ova_reg(head)
    else:
        rho = float(np.max(_row_sq_norms(features))) if features.shape[0] else 0.0
        comp = _competitive_rows(scores, labels)
        diffs = head.W[labels] - head.W[comp]
        wsq = np.cumsum(diffs * diffs, axis=1)[:, -1]
        reg_sum = float(seq_sum(wsq * rho))

    return ObjectiveValue(
        risk_sum=risk_sum,
        reg_sum=reg_sum,
        total=alpha * reg_sum + risk_sum,
        alpha_used=alpha,
    )


def risk_score_gradients(scores, labels, risk: RiskKind) -> np.ndarray:
    """d(risk_sum)/d(scores), one row per sample.

    Hinge uses subgradient 0 exactly at xi = 1, so only xi < 1 is active.
    """
    scores = as_mat(scores)
    labels = np.asarray(labels, dtype=np.int64)
    n = scores.shape[0]
    rows = np.arange(n)
    if risk == RiskKind.CROSS_ENTROPY:
        d = _softmax_rows(scores)
        d[rows, labels] -= 1.0
        return d
    d = np.zeros_like(scores)
    comp = _competitive_rows(scores, labels)
    xi = scores[rows, labels] - scores[rows, comp]
    active = xi < 1.0
    d[rows[active], labels[active]] = -1.0
    d[rows[active], comp[active]] = 1.0
    return d


def objective_gradients(
    head: LinearHead, features, labels, cfg: ObjectiveConfig, alpha: float
) -> GradientSet:
    """Analytic gradients of the total objective at the head.

    The competitive classes and the phi_max row are constants of the
    evaluation point: selection is non-differentiable.
    """
    features, labels = _check_batch(head, features, labels)
    scores = score_batch(head, features)
    d_scores = risk_score_gradients(scores, labels, cfg.risk)

    dW = matmul(d_scores.T, features)
    db = np.asarray(seq_sum(d_scores, axis=0))
    dPhi = matmul(d_scores, head.W)

    if cfg.reg == RegKind.WEIGHT_DECAY:
        c = alpha * cfg.weight_decay_coef * 2.0
        dW += c * head.W
        db += c * head.b
    elif cfg.reg == RegKind.ONE_VS_ALL_L2:
        dW += alpha * 2.0 * head.W
    elif cfg.reg == RegKind.PMM:
        sq = _row_sq_norms(features)
        max_idx = int(np.argmax(sq))
        rho = float(sq[max_idx])
        comp = _competitive_rows(scores, labels)
        wsq_total = 0.0
        for i in range(features.shape[0]):
            y_i = labels[i]
            m_i = comp[i]
            diff = head.W[y_i] - head.W[m_i]
            g = (alpha * 2.0 * rho) * diff
            dW[y_i] += g
            dW[m_i] -= g
            if cfg.phi_max_mode == PhiMaxMode.FLOW_GRADIENT:
                wsq_total += seq_sum(diff * diff)
        if cfg.phi_max_mode == PhiMaxMode.FLOW_GRADIENT:
            dPhi[max_idx] += (alpha * wsq_total * 2.0) * features[max_idx]

    return GradientSet(dW=dW, db=db, dPhi=dPhi)
