"""TOML experiment configuration: strict schema, unknown keys are errors.

A full experiment file has [data], [model], [train], and optionally
[alpha] and [selection] tables. gen-data spec files carry just the
synthetic-dataset keys at top level.
"""

from __future__ import annotations

from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .data import (
    SplitSpec,
    SyntheticSpec,
    gen_synthetic,
    load_csv,
    load_idx,
    split,
)
from .errors import ConfigError
from .harness import TrainConfig
from .model import Activation
from .objective import AlphaSchedule, PhiMaxMode, RegKind, RiskKind
from .selector import SelectionConfig, SelectionMode

_MISSING = object()


class _Table:
    """One TOML table with typed take() access; leftovers are errors."""

    def __init__(self, raw: dict, where: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"{where}: expected a table")
        self.raw = dict(raw)
        self.where = where

    def take(self, key: str, kind, default=_MISSING):
        if key not in self.raw:
            if default is _MISSING:
                raise ConfigError(f"{self.where}: missing required key '{key}'")
            return default
        val = self.raw.pop(key)
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{self.where}.{key}: expected a number")
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{self.where}.{key}: expected an integer")
            return val
        if kind is bool:
            if not isinstance(val, bool):
                raise ConfigError(f"{self.where}.{key}: expected a boolean")
            return val
        if kind is str:
            if not isinstance(val, str):
                raise ConfigError(f"{self.where}.{key}: expected a string")
            return val
        if kind is list:
            if not isinstance(val, list):
                raise ConfigError(f"{self.where}.{key}: expected a list")
            return val
        raise AssertionError(kind)

    def subtable(self, key: str, required: bool = True):
        if key not in self.raw:
            if required:
                raise ConfigError(f"{self.where}: missing [{key}] table")
            return None
        return _Table(self.raw.pop(key), f"{self.where}.{key}".lstrip("."))

    def finish(self) -> None:
        if self.raw:
            extras = ", ".join(sorted(self.raw))
            raise ConfigError(f"{self.where}: unknown keys: {extras}")


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: TOML parse error: {e}") from e


def _int_list(vals, where: str) -> list[int]:
    out = []
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where}: expected integers")
        out.append(v)
    return out


def _enum(kind, raw: str, where: str):
    try:
        return kind(raw)
    except ValueError:
        options = ", ".join(e.value for e in kind)
        raise ConfigError(f"{where}: got {raw!r}, expected one of: {options}") from None


@dataclass(frozen=True)
class DataConfig:
    """The [data] table: where samples come from and how they split."""

    kind: str
    seed: int
    train_fraction: float
    split_seed: int
    spec: SyntheticSpec | None = None
    path: str | None = None
    has_header: bool = True
    images: str | None = None
    labels: str | None = None

    def build(self, seed_override: int | None = None):
        """(train, val) datasets; seed_override re-seeds generation and split
        for paired comparisons."""
        gen_seed = self.seed if seed_override is None else seed_override
        split_seed = self.split_seed if seed_override is None else seed_override
        if self.kind in ("blobs", "moons", "rings"):
            spec = self.spec
            if gen_seed != spec.seed:
                spec = SyntheticSpec(**{**spec.__dict__, "seed": gen_seed})
            ds = gen_synthetic(spec)
        elif self.kind == "csv":
            ds = load_csv(self.path, has_header=self.has_header)
        else:
            ds = load_idx(self.images, self.labels)
        try:
            return split(ds, SplitSpec(self.train_fraction, split_seed))
        except ValueError as e:
            raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    train: TrainConfig


def _parse_synthetic(tab: _Table, kind: str, seed: int) -> SyntheticSpec:
    try:
        if kind == "blobs":
            centers = tab.take("centers", list)
            return SyntheticSpec.blobs(
                centers=centers,
                n_per_class=tab.take("n_per_class", int),
                sigma=tab.take("sigma", float),
                seed=seed,
            )
        if kind == "moons":
            return SyntheticSpec.moons(
                n=tab.take("n", int),
                noise_sigma=tab.take("noise_sigma", float),
                seed=seed,
            )
        return SyntheticSpec.rings(
            n=tab.take("n", int),
            radii=tab.take("radii", list),
            noise_sigma=tab.take("noise_sigma", float),
            seed=seed,
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{tab.where}: {e}") from e


def _parse_data(tab: _Table) -> DataConfig:
    kind = tab.take("kind", str)
    if kind not in ("blobs", "moons", "rings", "csv", "idx"):
        raise ConfigError(f"{tab.where}.kind: unknown kind {kind!r}")
    seed = tab.take("seed", int, 0)
    train_fraction = tab.take("train_fraction", float)
    split_seed = tab.take("split_seed", int, seed)
    spec = None
    path = images = labels = None
    has_header = True
    if kind in ("blobs", "moons", "rings"):
        spec = _parse_synthetic(tab, kind, seed)
    elif kind == "csv":
        path = tab.take("path", str)
        has_header = tab.take("has_header", bool, True)
    else:
        images = tab.take("images", str)
        labels = tab.take("labels", str)
    tab.finish()
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"{tab.where}.train_fraction must lie in (0, 1)")
    return DataConfig(
        kind=kind,
        seed=seed,
        train_fraction=train_fraction,
        split_seed=split_seed,
        spec=spec,
        path=path,
        has_header=has_header,
        images=images,
        labels=labels,
    )


def _parse_alpha(tab: _Table | None, default_total_steps: int) -> AlphaSchedule:
    if tab is None:
        return AlphaSchedule.constant(1e-3)
    kind = tab.take("kind", str)
    try:
        if kind == "constant":
            sched = AlphaSchedule.constant(tab.take("a", float))
        elif kind == "linear":
            sched = AlphaSchedule.linear(
                tab.take("a0", float),
                tab.take("a1", float),
                tab.take("total_steps", int, default_total_steps),
            )
        else:
            raise ConfigError(f"{tab.where}.kind: got {kind!r}")
    except ValueError as e:
        raise ConfigError(f"{tab.where}: {e}") from e
    tab.finish()
    return sched


def _parse_selection(tab: _Table | None) -> SelectionConfig:
    if tab is None:
        return SelectionConfig(SelectionMode.RANDOM, 64, 64)
    mode = _enum(SelectionMode, tab.take("mode", str, "random"), f"{tab.where}.mode")
    big = tab.take("big_batch", int, 64)
    small = tab.take("small_batch", int, 64)
    tab.finish()
    try:
        return SelectionConfig(mode, big, small)
    except ValueError as e:
        raise ConfigError(f"{tab.where}: {e}") from e


def parse_experiment_dict(raw: dict, where: str = "config") -> ExperimentConfig:
    root = _Table(raw, where)
    data = _parse_data(root.subtable("data"))

    mtab = root.subtable("model")
    dims = _int_list(mtab.take("dims", list), f"{mtab.where}.dims")
    acts = [
        _enum(Activation, a, f"{mtab.where}.activations")
        for a in mtab.take("activations", list, [])
    ]
    mtab.finish()

    ttab = root.subtable("train")
    total_steps = ttab.take("total_steps", int)
    train_kwargs = dict(
        dims=tuple(dims),
        activations=tuple(acts),
        total_steps=total_steps,
        lr_base=ttab.take("lr_base", float),
        lr_drop_steps=tuple(
            _int_list(ttab.take("lr_drop_steps", list, []), f"{ttab.where}.lr_drop_steps")
        ),
        lr_drop_factor=ttab.take("lr_drop_factor", float, 10.0),
        risk=_enum(RiskKind, ttab.take("risk", str, "cross_entropy"), f"{ttab.where}.risk"),
        reg=_enum(RegKind, ttab.take("reg", str, "none"), f"{ttab.where}.reg"),
        weight_decay_coef=ttab.take("weight_decay_coef", float, 5e-4),
        phi_max_mode=_enum(
            PhiMaxMode,
            ttab.take("phi_max_mode", str, "stop_gradient"),
            f"{ttab.where}.phi_max_mode",
        ),
        seed=ttab.take("seed", int, 0),
        eval_every=ttab.take("eval_every", int, 100),
        target_val_accuracy=ttab.take("target_val_accuracy", float, None),
        early_stop=ttab.take("early_stop", bool, False),
    )
    ttab.finish()

    alpha = _parse_alpha(root.subtable("alpha", required=False), total_steps)
    selection = _parse_selection(root.subtable("selection", required=False))
    root.finish()

    cfg = TrainConfig(alpha=alpha, selection=selection, **train_kwargs)
    cfg.validate()
    return ExperimentConfig(data=data, train=cfg)


def parse_experiment_config(path) -> ExperimentConfig:
    return parse_experiment_dict(_load_toml(path), where=str(path))


def parse_gen_spec(path) -> SyntheticSpec:
    """gen-data spec file: kind, seed, and the kind's parameters, top level."""
    tab = _Table(_load_toml(path), str(path))
    kind = tab.take("kind", str)
    if kind not in ("blobs", "moons", "rings"):
        raise ConfigError(f"{tab.where}.kind: gen-data only makes {('blobs', 'moons', 'rings')}")
    seed = tab.take("seed", int, 0)
    spec = _parse_synthetic(tab, kind, seed)
    tab.finish()
    return spec
