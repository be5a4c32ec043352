"""Experiment engine: the training loop wiring selection, objective, and
model updates, plus metrics persistence, checkpointing, and paired-run
comparison.

Determinism contract: a run is a pure function of (TrainConfig, datasets).
Candidate batches come from seeded epoch shuffles derived from the config
seed, model init and random selection use their own derived streams, and
every reduction is order-pinned, so reruns produce bit-identical metrics
and parameters. Checkpoints capture enough state (step, shuffle cursor,
selection RNG) for a resumed run to be bit-identical to an uninterrupted
one.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LabeledDataset
from .errors import CheckpointError, ConfigError, ShapeError
from .margin import DEGENERATE_NORM_EPS, LinearHead, predict, score_batch
from .model import (
    Activation,
    AffineLayer,
    ForwardTrace,
    Gradients,
    Mlp,
    backward_body,
    body_sq_sum,
    extract_features,
    forward,
    init_mlp,
    sgd_step,
    trace_rows,
)
from .numkernel import RngStream, derive_seed
from .objective import (
    AlphaSchedule,
    ObjectiveConfig,
    ObjectiveValue,
    PhiMaxMode,
    RegKind,
    RiskKind,
    alpha_at,
    objective_batch,
    objective_gradients,
)
from .selector import SelectionConfig, SelectionMode, select_mms, select_random

# Sub-stream tags hung off the run seed; pinned like the RNG itself.
TAG_INIT = 1
TAG_SELECT = 2
TAG_DATA = 3

METRICS_HEADER = (
    "step,lr,alpha,train_error,val_error,risk_sum,reg_sum,"
    "mean_mms,min_norm_pairwise_margin"
)

CHECKPOINT_MAGIC = b"MLCP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    dims: tuple[int, ...]
    activations: tuple[Activation, ...]
    total_steps: int
    lr_base: float
    lr_drop_steps: tuple[int, ...] = ()
    lr_drop_factor: float = 10.0
    risk: RiskKind = RiskKind.CROSS_ENTROPY
    reg: RegKind = RegKind.NONE
    weight_decay_coef: float = 5e-4
    alpha: AlphaSchedule = field(default_factory=lambda: AlphaSchedule.constant(1e-3))
    phi_max_mode: PhiMaxMode = PhiMaxMode.STOP_GRADIENT
    selection: SelectionConfig = field(
        default_factory=lambda: SelectionConfig(SelectionMode.RANDOM, 64, 64)
    )
    seed: int = 0
    eval_every: int = 100
    target_val_accuracy: float | None = None
    early_stop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(
            self, "activations", tuple(Activation(a) for a in self.activations)
        )
        object.__setattr__(
            self, "lr_drop_steps", tuple(int(s) for s in self.lr_drop_steps)
        )

    def validate(self) -> None:
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise ConfigError(f"dims must chain input..classes, got {self.dims}")
        if self.dims[-1] < 2:
            raise ConfigError(f"class count must be >= 2, got {self.dims[-1]}")
        if len(self.activations) != len(self.dims) - 2:
            raise ConfigError(
                f"need {len(self.dims) - 2} activations, got {len(self.activations)}"
            )
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.lr_base <= 0.0:
            raise ConfigError(f"lr_base must be positive, got {self.lr_base}")
        if self.lr_drop_factor <= 1.0:
            raise ConfigError(
                f"lr_drop_factor must be > 1, got {self.lr_drop_factor}"
            )
        drops = self.lr_drop_steps
        if any(d < 1 for d in drops):
            raise ConfigError("lr drop steps must be >= 1")
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigError(f"lr drop steps must strictly increase, got {drops}")
        if drops and drops[-1] > self.total_steps:
            raise ConfigError("lr drop steps must not exceed total_steps")
        if self.weight_decay_coef < 0.0:
            raise ConfigError("weight_decay_coef must be >= 0")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.target_val_accuracy is not None and not (
            0.0 < self.target_val_accuracy <= 1.0
        ):
            raise ConfigError("target_val_accuracy must lie in (0, 1]")
        if self.early_stop and self.target_val_accuracy is None:
            raise ConfigError("early_stop requires target_val_accuracy")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Step-decay schedule: base / factor^(number of drop steps <= step)."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return cfg.lr_base / cfg.lr_drop_factor ** bisect_right(cfg.lr_drop_steps, step)


@dataclass
class MetricsRecord:
    step: int
    lr: float
    alpha: float
    train_error: float
    val_error: float
    risk_sum: float | None
    reg_sum: float | None
    mean_mms: float | None
    min_norm_pairwise_margin: float


@dataclass
class TrainState:
    """Cursor needed to resume a run bit-exactly."""

    step: int
    epoch: int
    offset: int
    rng_state: tuple[int, float | None]


@dataclass
class StepSelection:
    step: int
    candidates: np.ndarray  # dataset indices of the forward batch
    selected_pos: np.ndarray  # positions into candidates, selection order
    selected: np.ndarray  # dataset indices trained on


@dataclass
class TrainResult:
    model: Mlp
    metrics: list[MetricsRecord]
    state: TrainState
    selection_log: list[StepSelection] | None


class CandidateStream:
    """Seeded epoch shuffle emitting batch_iter-compatible index batches.

    The (epoch, offset) cursor is all the state a checkpoint needs; the
    permutation of any epoch is recomputed from the run seed.
    """

    def __init__(self, n: int, big_batch: int, run_seed: int, epoch: int = 0, offset: int = 0):
        self.n = n
        self.big_batch = big_batch
        self.run_seed = run_seed
        self.epoch = epoch
        self.offset = offset
        self._perm = self._perm_for(epoch)

    def _perm_for(self, epoch: int) -> np.ndarray:
        return RngStream(derive_seed(self.run_seed, TAG_DATA, epoch)).permutation(self.n)

    def next_batch(self) -> np.ndarray:
        if self.offset >= self.n:
            self.epoch += 1
            self.offset = 0
            self._perm = self._perm_for(self.epoch)
        batch = self._perm[self.offset : self.offset + self.big_batch]
        self.offset += len(batch)
        return batch


def evaluate(model: Mlp, ds: LabeledDataset):
    """(top-1 error fraction, k x k confusion counts[true, predicted])."""
    if ds.in_dim != model.in_dim:
        raise ShapeError(f"data dim {ds.in_dim} != model input {model.in_dim}")
    preds = predict(forward(model, ds.X).scores)
    error = float(np.mean(preds != ds.y))
    confusion = np.zeros((ds.k, model.n_classes), dtype=np.int64)
    np.add.at(confusion, (ds.y, preds), 1)
    return error, confusion


def min_norm_margin(model: Mlp, ds: LabeledDataset) -> float:
    """Minimum over the dataset of the normalized pairwise feature margin,
    each sample against its current competitive class.

    Returns nan when every feature vector is zero (no batch radius).
    Bit-identical to looping margin.normalized_feature_margin row by row.
    """
    phi = extract_features(model, ds.X)
    sq = np.cumsum(phi * phi, axis=1)[:, -1]
    rho = float(np.max(sq))
    if rho <= 0.0:
        return float("nan")
    phimax = float(np.sqrt(rho))
    head = model.head
    scores = score_batch(head, phi)
    masked = scores.copy()
    rows = np.arange(ds.n)
    masked[rows, ds.y] = -np.inf
    comp = np.argmax(masked, axis=1)
    diffs = head.W[ds.y] - head.W[comp]
    num = np.cumsum(diffs * phi, axis=1)[:, -1] + (head.b[ds.y] - head.b[comp])
    dsq = diffs * diffs
    den = np.sqrt(np.cumsum(dsq, axis=1)[:, -1])
    vals = np.empty(ds.n)
    ok = den >= DEGENERATE_NORM_EPS
    np.divide(num, den, out=vals, where=ok)
    vals[~ok] = np.where(num[~ok] > 0, np.inf, np.where(num[~ok] < 0, -np.inf, 0.0))
    vals /= phimax
    return float(np.min(vals))


def batch_objective(
    model: Mlp, features, labels, obj_cfg: ObjectiveConfig, alpha: float
) -> ObjectiveValue:
    """Objective over a training batch, including the body part of weight
    decay that the head-level objective leaves to the trainer."""
    ov = objective_batch(model.head, features, labels, obj_cfg, alpha)
    if obj_cfg.reg == RegKind.WEIGHT_DECAY and model.body:
        reg = ov.reg_sum + obj_cfg.weight_decay_coef * body_sq_sum(model)
        return ObjectiveValue(ov.risk_sum, reg, alpha * reg + ov.risk_sum, alpha)
    return ov


def step_gradients(
    model: Mlp, trace: ForwardTrace, labels, obj_cfg: ObjectiveConfig, alpha: float
) -> Gradients:
    """Full-model gradients of the batch objective at the traced batch."""
    og = objective_gradients(model.head, trace.features, labels, obj_cfg, alpha)
    grads = Gradients(
        body=backward_body(model, trace, og.dPhi),
        head_dW=og.dW,
        head_db=og.db,
    )
    if obj_cfg.reg == RegKind.WEIGHT_DECAY:
        c = alpha * obj_cfg.weight_decay_coef * 2.0
        for layer, (dW, db) in zip(model.body, grads.body):
            dW += c * layer.W
            db += c * layer.b
    return grads


def _objective_config(cfg: TrainConfig) -> ObjectiveConfig:
    return ObjectiveConfig(
        risk=cfg.risk,
        reg=cfg.reg,
        weight_decay_coef=cfg.weight_decay_coef,
        phi_max_mode=cfg.phi_max_mode,
    )


def _metrics_record(
    cfg: TrainConfig,
    model: Mlp,
    train_ds: LabeledDataset,
    val_ds: LabeledDataset,
    step: int,
    last_obj: ObjectiveValue | None,
    last_mean_mms: float | None,
) -> MetricsRecord:
    sched_step = max(step - 1, 0)
    return MetricsRecord(
        step=step,
        lr=lr_at(cfg, sched_step),
        alpha=alpha_at(cfg.alpha, sched_step),
        train_error=evaluate(model, train_ds)[0],
        val_error=evaluate(model, val_ds)[0],
        risk_sum=None if last_obj is None else last_obj.risk_sum,
        reg_sum=None if last_obj is None else last_obj.reg_sum,
        mean_mms=last_mean_mms,
        min_norm_pairwise_margin=min_norm_margin(model, val_ds),
    )


def _check_data(cfg: TrainConfig, train_ds: LabeledDataset, val_ds: LabeledDataset):
    if train_ds.in_dim != cfg.dims[0]:
        raise ConfigError(
            f"train data dim {train_ds.in_dim} != model input {cfg.dims[0]}"
        )
    if val_ds.in_dim != cfg.dims[0]:
        raise ConfigError(f"val data dim {val_ds.in_dim} != model input {cfg.dims[0]}")
    if max(train_ds.k, val_ds.k) > cfg.dims[-1]:
        raise ConfigError(
            f"data has {max(train_ds.k, val_ds.k)} classes, model scores {cfg.dims[-1]}"
        )


def train_run(
    cfg: TrainConfig,
    train_ds: LabeledDataset,
    val_ds: LabeledDataset,
    *,
    model: Mlp | None = None,
    state: TrainState | None = None,
    log_selection: bool = False,
) -> TrainResult:
    """Run (or resume) selective-sampling SGD for cfg.total_steps updates.

    Each step forward-passes a candidate batch of size selection.big_batch,
    keeps selection.small_batch samples (smallest MMS, or random for the
    baseline), and takes one SGD step on the kept samples. phi_max is
    recomputed on each kept batch. Metrics are emitted at step 0 (fresh runs),
    every eval_every steps, and at the final step.
    """
    cfg.validate()
    _check_data(cfg, train_ds, val_ds)
    if (model is None) != (state is None):
        raise ValueError("resume needs both model and state")

    sel_rng = RngStream(derive_seed(cfg.seed, TAG_SELECT))
    if model is None:
        model = init_mlp(cfg.dims, cfg.activations, derive_seed(cfg.seed, TAG_INIT))
        start = 0
        stream = CandidateStream(train_ds.n, cfg.selection.big_batch, cfg.seed)
    else:
        start = state.step
        if start > cfg.total_steps:
            raise ConfigError(
                f"checkpoint step {start} is past total_steps {cfg.total_steps}"
            )
        stream = CandidateStream(
            train_ds.n, cfg.selection.big_batch, cfg.seed, state.epoch, state.offset
        )
        sel_rng.set_state(state.rng_state)

    obj_cfg = _objective_config(cfg)
    metrics: list[MetricsRecord] = []
    sel_log: list[StepSelection] | None = [] if log_selection else None

    last_obj: ObjectiveValue | None = None
    last_mean_mms: float | None = None
    if start == 0:
        metrics.append(
            _metrics_record(cfg, model, train_ds, val_ds, 0, None, None)
        )

    for t in range(start + 1, cfg.total_steps + 1):
        cand = stream.next_batch()
        trace = forward(model, train_ds.X[cand])
        b_eff = min(cfg.selection.small_batch, len(cand))
        if cfg.selection.mode == SelectionMode.MMS:
            sel = select_mms(trace.scores, model.head, b_eff)
        else:
            sel = select_random(len(cand), b_eff, sel_rng)
        sub = sel.indices
        labels = train_ds.y[cand][sub]
        trace_b = trace_rows(trace, sub)

        a = alpha_at(cfg.alpha, t - 1)
        last_obj = batch_objective(model, trace_b.features, labels, obj_cfg, a)
        last_mean_mms = sel.mean_mms
        grads = step_gradients(model, trace_b, labels, obj_cfg, a)
        sgd_step(model, grads, lr_at(cfg, t - 1))

        if sel_log is not None:
            sel_log.append(
                StepSelection(
                    step=t,
                    candidates=cand.copy(),
                    selected_pos=sub.copy(),
                    selected=cand[sub].copy(),
                )
            )

        if t % cfg.eval_every == 0 or t == cfg.total_steps:
            rec = _metrics_record(
                cfg, model, train_ds, val_ds, t, last_obj, last_mean_mms
            )
            metrics.append(rec)
            if (
                cfg.early_stop
                and cfg.target_val_accuracy is not None
                and 1.0 - rec.val_error >= cfg.target_val_accuracy
            ):
                return TrainResult(
                    model,
                    metrics,
                    TrainState(t, stream.epoch, stream.offset, sel_rng.get_state()),
                    sel_log,
                )

    final_step = max(start, cfg.total_steps)
    return TrainResult(
        model,
        metrics,
        TrainState(final_step, stream.epoch, stream.offset, sel_rng.get_state()),
        sel_log,
    )


# --- run summaries and paired comparison -------------------------------


@dataclass
class RunSummary:
    run_id: str
    final_val_accuracy: float
    steps_to_target: int | None
    config_hash: str


@dataclass
class PairedOutcome:
    seed: int
    summary_a: RunSummary
    summary_b: RunSummary
    min_margin_a: float
    min_margin_b: float


@dataclass
class ComparisonResult:
    outcomes: list[PairedOutcome]
    accuracy_wins: tuple[int, int, int]  # (a, b, ties)
    margin_wins: tuple[int, int, int]
    steps_wins: tuple[int, int, int]  # fewer steps to target wins


def steps_to_target(metrics: list[MetricsRecord], target: float) -> int | None:
    for rec in metrics:
        if 1.0 - rec.val_error >= target:
            return rec.step
    return None


def run_summary(cfg: TrainConfig, metrics: list[MetricsRecord]) -> RunSummary:
    h = config_hash(cfg)
    final = metrics[-1]
    stt = (
        steps_to_target(metrics, cfg.target_val_accuracy)
        if cfg.target_val_accuracy is not None
        else None
    )
    return RunSummary(
        run_id=f"{h[:8]}-s{cfg.seed}",
        final_val_accuracy=1.0 - final.val_error,
        steps_to_target=stt,
        config_hash=h,
    )


def _wins(a_vals, b_vals, better):
    a = b = ties = 0
    for va, vb in zip(a_vals, b_vals):
        c = better(va, vb)
        if c > 0:
            a += 1
        elif c < 0:
            b += 1
        else:
            ties += 1
    return a, b, ties


def compare_runs(
    cfg_a: TrainConfig,
    cfg_b: TrainConfig,
    data_fn,
    n_seeds: int,
    base_seed: int = 0,
) -> ComparisonResult:
    """Paired runs: for each seed both configs see identical data and model
    seeds; reports per-seed summaries plus win counts."""
    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be >= 1, got {n_seeds}")
    outcomes = []
    for i in range(n_seeds):
        s = base_seed + i
        train_ds, val_ds = data_fn(s)
        ra = train_run(replace(cfg_a, seed=s), train_ds, val_ds)
        rb = train_run(replace(cfg_b, seed=s), train_ds, val_ds)
        outcomes.append(
            PairedOutcome(
                seed=s,
                summary_a=run_summary(replace(cfg_a, seed=s), ra.metrics),
                summary_b=run_summary(replace(cfg_b, seed=s), rb.metrics),
                min_margin_a=ra.metrics[-1].min_norm_pairwise_margin,
                min_margin_b=rb.metrics[-1].min_norm_pairwise_margin,
            )
        )

    def more(x, y):
        return (x > y) - (x < y)

    def fewer_steps(x, y):
        xi = float("inf") if x is None else x
        yi = float("inf") if y is None else y
        return (xi < yi) - (yi < xi)

    return ComparisonResult(
        outcomes=outcomes,
        accuracy_wins=_wins(
            [o.summary_a.final_val_accuracy for o in outcomes],
            [o.summary_b.final_val_accuracy for o in outcomes],
            more,
        ),
        margin_wins=_wins(
            [o.min_margin_a for o in outcomes],
            [o.min_margin_b for o in outcomes],
            more,
        ),
        steps_wins=_wins(
            [o.summary_a.steps_to_target for o in outcomes],
            [o.summary_b.steps_to_target for o in outcomes],
            fewer_steps,
        ),
    )


# --- metrics CSV --------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_metrics_csv(metrics: list[MetricsRecord], path) -> None:
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(METRICS_HEADER + "\n")
        for r in metrics:
            f.write(
                ",".join(
                    [
                        str(r.step),
                        _fmt(r.lr),
                        _fmt(r.alpha),
                        _fmt(r.train_error),
                        _fmt(r.val_error),
                        _fmt(r.risk_sum),
                        _fmt(r.reg_sum),
                        _fmt(r.mean_mms),
                        _fmt(r.min_norm_pairwise_margin),
                    ]
                )
                + "\n"
            )


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise CheckpointError(f"{path}: unrecognized metrics header")
    out = []
    for line in lines[1:]:
        c = line.split(",")
        out.append(
            MetricsRecord(
                step=int(c[0]),
                lr=float(c[1]),
                alpha=float(c[2]),
                train_error=float(c[3]),
                val_error=float(c[4]),
                risk_sum=None if c[5] == "" else float(c[5]),
                reg_sum=None if c[6] == "" else float(c[6]),
                mean_mms=None if c[7] == "" else float(c[7]),
                min_norm_pairwise_margin=float(c[8]),
            )
        )
    return out


# --- config dict round trip and hashing ---------------------------------


def config_to_dict(cfg: TrainConfig) -> dict:
    if cfg.alpha.kind == "constant":
        alpha = {"kind": "constant", "a": cfg.alpha.a}
    else:
        alpha = {
            "kind": "linear",
            "a0": cfg.alpha.a0,
            "a1": cfg.alpha.a1,
            "total_steps": cfg.alpha.total_steps,
        }
    return {
        "dims": list(cfg.dims),
        "activations": [a.value for a in cfg.activations],
        "total_steps": cfg.total_steps,
        "lr_base": cfg.lr_base,
        "lr_drop_steps": list(cfg.lr_drop_steps),
        "lr_drop_factor": cfg.lr_drop_factor,
        "risk": cfg.risk.value,
        "reg": cfg.reg.value,
        "weight_decay_coef": cfg.weight_decay_coef,
        "alpha": alpha,
        "phi_max_mode": cfg.phi_max_mode.value,
        "selection": {
            "mode": cfg.selection.mode.value,
            "big_batch": cfg.selection.big_batch,
            "small_batch": cfg.selection.small_batch,
        },
        "seed": cfg.seed,
        "eval_every": cfg.eval_every,
        "target_val_accuracy": cfg.target_val_accuracy,
        "early_stop": cfg.early_stop,
    }


def config_from_dict(d: dict) -> TrainConfig:
    try:
        alpha_d = d["alpha"]
        if alpha_d["kind"] == "constant":
            alpha = AlphaSchedule.constant(alpha_d["a"])
        elif alpha_d["kind"] == "linear":
            alpha = AlphaSchedule.linear(
                alpha_d["a0"], alpha_d["a1"], alpha_d["total_steps"]
            )
        else:
            raise ConfigError(f"unknown alpha kind {alpha_d['kind']!r}")
        sel_d = d["selection"]
        cfg = TrainConfig(
            dims=tuple(d["dims"]),
            activations=tuple(Activation(a) for a in d["activations"]),
            total_steps=d["total_steps"],
            lr_base=d["lr_base"],
            lr_drop_steps=tuple(d["lr_drop_steps"]),
            lr_drop_factor=d["lr_drop_factor"],
            risk=RiskKind(d["risk"]),
            reg=RegKind(d["reg"]),
            weight_decay_coef=d["weight_decay_coef"],
            alpha=alpha,
            phi_max_mode=PhiMaxMode(d["phi_max_mode"]),
            selection=SelectionConfig(
                SelectionMode(sel_d["mode"]),
                sel_d["big_batch"],
                sel_d["small_batch"],
            ),
            seed=d["seed"],
            eval_every=d["eval_every"],
            target_val_accuracy=d["target_val_accuracy"],
            early_stop=d["early_stop"],
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad config payload: {e}") from e
    cfg.validate()
    return cfg


def config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


# --- binary checkpoint ---------------------------------------------------


def save_checkpoint(path, model: Mlp, cfg: TrainConfig, state: TrainState) -> None:
    """Length-prefixed little-endian binary with version and CRC32."""
    parts = []
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":")).encode(
        "ascii"
    )
    parts.append(struct.pack("<Q", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<QQQ", state.step, state.epoch, state.offset))
    rng_u64, gauss = state.rng_state
    parts.append(
        struct.pack(
            "<QBd", rng_u64, 0 if gauss is None else 1, 0.0 if gauss is None else gauss
        )
    )
    arrays = model.parameters()
    parts.append(struct.pack("<I", len(arrays)))
    for arr in arrays:
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(payload)))
        f.write(struct.pack("<I", zlib.crc32(payload)))
        f.write(payload)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated payload")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Returns (model, cfg, state); fails closed on any corruption."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    (plen,) = struct.unpack("<Q", raw[8:16])
    (crc,) = struct.unpack("<I", raw[16:20])
    payload = raw[20:]
    if len(payload) != plen:
        raise CheckpointError(
            f"{path}: payload length {len(payload)} != declared {plen}"
        )
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")

    r = _Reader(payload, path)
    (blob_len,) = r.unpack("<Q")
    try:
        cfg_dict = json.loads(r.take(blob_len).decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad config blob: {e}") from e
    cfg = config_from_dict(cfg_dict)
    step, epoch, offset = r.unpack("<QQQ")
    rng_u64, has_gauss, gauss = r.unpack("<QBd")
    state = TrainState(
        step=step,
        epoch=epoch,
        offset=offset,
        rng_state=(rng_u64, gauss if has_gauss else None),
    )
    (n_arrays,) = r.unpack("<I")
    arrays = []
    for _ in range(n_arrays):
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
        arrays.append(data.reshape(shape))
    if r.pos != len(payload):
        raise CheckpointError(f"{path}: trailing bytes in payload")

    expected = 2 * (len(cfg.dims) - 1)
    if len(arrays) != expected:
        raise CheckpointError(
            f"{path}: {len(arrays)} parameter arrays, config implies {expected}"
        )
    body = []
    for i, act in enumerate(cfg.activations):
        body.append(AffineLayer(W=arrays[2 * i], b=arrays[2 * i + 1], activation=act))
    head = LinearHead(W=arrays[-2], b=arrays[-1])
    model = Mlp(body=body, head=head)
    if model.in_dim != cfg.dims[0] or model.n_classes != cfg.dims[-1]:
        raise CheckpointError(f"{path}: parameter shapes disagree with config dims")
    return model, cfg, state


# --- embedding export ----------------------------------------------------


def export_embeddings(model: Mlp, ds: LabeledDataset, path) -> None:
    """CSV of penultimate-layer features with true and predicted labels."""
    phi = extract_features(model, ds.X)
    preds = predict(score_batch(model.head, phi))
    d = phi.shape[1]
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(",".join([f"phi_{i}" for i in range(d)] + ["label", "pred"]) + "\n")
        for i in range(ds.n):
            cells = [repr(float(v)) for v in phi[i]]
            cells.append(str(int(ds.y[i])))
            cells.append(str(int(preds[i])))
            f.write(",".join(cells) + "\n")
