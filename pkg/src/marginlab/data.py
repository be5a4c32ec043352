"""Desk-scale datasets: seeded synthetic generators, CSV/IDX ingestion,
normalization, splits, and deterministic batch iteration.

All randomness flows through RngStream, and draw order is pinned
(sample-major, then coordinate), so generated datasets are stable golden
inputs for tests and experiments.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, ShapeError
from .numkernel import RngStream, as_mat


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    k: int
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.X = as_mat(self.X)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] < 1:
            raise ShapeError("dataset needs at least one sample")
        if self.y.shape != (self.X.shape[0],):
            raise ShapeError(
                f"labels shape {self.y.shape} != sample count {self.X.shape[0]}"
            )
        if not np.isfinite(self.X).all():
            raise ValueError("features must be finite")
        if self.y.min() < 0 or self.y.max() >= self.k:
            raise ValueError(f"labels must lie in [0, {self.k})")
        if self.feature_names is not None and len(self.feature_names) != self.X.shape[1]:
            raise ShapeError("feature_names length != feature count")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def in_dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    seed: int
    n_per_class: int = 0
    centers: tuple = ()
    sigma: float = 0.0
    n: int = 0
    noise_sigma: float = 0.0
    radii: tuple = ()

    @classmethod
    def blobs(cls, centers, n_per_class: int, sigma: float, seed: int) -> "SyntheticSpec":
        centers = tuple(tuple(float(v) for v in c) for c in centers)
        if len(centers) < 1:
            raise ValueError("blobs need at least one center")
        if len(set(centers)) != len(centers):
            raise ValueError("blob centers must be distinct")
        if len({len(c) for c in centers}) != 1:
            raise ValueError("blob centers must share a dimension")
        if n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        return cls(kind="blobs", seed=seed, n_per_class=n_per_class, centers=centers, sigma=sigma)

    @classmethod
    def moons(cls, n: int, noise_sigma: float, seed: int) -> "SyntheticSpec":
        if n < 2:
            raise ValueError("moons need n >= 2")
        if noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        return cls(kind="moons", seed=seed, n=n, noise_sigma=noise_sigma)

    @classmethod
    def rings(cls, n: int, radii, noise_sigma: float, seed: int) -> "SyntheticSpec":
        radii = tuple(float(r) for r in radii)
        if len(radii) != 2 or radii[0] <= 0 or radii[1] <= 0 or radii[0] == radii[1]:
            raise ValueError("rings need two distinct positive radii")
        if n < 2:
            raise ValueError("rings need n >= 2")
        if noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        return cls(kind="rings", seed=seed, n=n, noise_sigma=noise_sigma, radii=radii)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


@dataclass
class FeatureStats:
    """Per-feature train-set mean and scale. scale is 1 where the train-set
    std was below 1e-12, so near-constant features are centered only."""

    mean: np.ndarray
    scale: np.ndarray


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    rng = RngStream(spec.seed)
    if spec.kind == "blobs":
        return _gen_blobs(spec, rng)
    if spec.kind == "moons":
        return _gen_moons(spec, rng)
    if spec.kind == "rings":
        return _gen_rings(spec, rng)
    raise ValueError(f"unknown synthetic kind {spec.kind!r}")


def _gen_blobs(spec: SyntheticSpec, rng: RngStream) -> LabeledDataset:
    k = len(spec.centers)
    dim = len(spec.centers[0])
    n = k * spec.n_per_class
    X = np.empty((n, dim))
    y = np.empty(n, dtype=np.int64)
    row = 0
    for j, center in enumerate(spec.centers):
        for _ in range(spec.n_per_class):
            for d in range(dim):
                X[row, d] = center[d] + spec.sigma * rng.next_gaussian()
            y[row] = j
            row += 1
    return LabeledDataset(X=X, y=y, k=k)


def _gen_moons(spec: SyntheticSpec, rng: RngStream) -> LabeledDataset:
    n_out = spec.n - spec.n // 2
    n_in = spec.n // 2
    X = np.empty((spec.n, 2))
    y = np.empty(spec.n, dtype=np.int64)
    row = 0
    for i in range(n_out):
        t = math.pi * i / max(n_out - 1, 1)
        X[row] = (math.cos(t) + spec.noise_sigma * rng.next_gaussian(),
                  math.sin(t) + spec.noise_sigma * rng.next_gaussian())
        y[row] = 0
        row += 1
    for i in range(n_in):
        t = math.pi * i / max(n_in - 1, 1)
        X[row] = (1.0 - math.cos(t) + spec.noise_sigma * rng.next_gaussian(),
                  0.5 - math.sin(t) + spec.noise_sigma * rng.next_gaussian())
        y[row] = 1
        row += 1
    return LabeledDataset(X=X, y=y, k=2)


def _gen_rings(spec: SyntheticSpec, rng: RngStream) -> LabeledDataset:
    counts = (spec.n - spec.n // 2, spec.n // 2)
    X = np.empty((spec.n, 2))
    y = np.empty(spec.n, dtype=np.int64)
    row = 0
    for cls, (radius, count) in enumerate(zip(spec.radii, counts)):
        for i in range(count):
            t = 2.0 * math.pi * i / count
            X[row] = (radius * math.cos(t) + spec.noise_sigma * rng.next_gaussian(),
                      radius * math.sin(t) + spec.noise_sigma * rng.next_gaussian())
            y[row] = cls
            row += 1
    return LabeledDataset(X=X, y=y, k=2)


def save_csv(ds: LabeledDataset, path, include_header: bool = True) -> None:
    """Full-precision decimal CSV; last column is the integer label."""
    names = ds.feature_names or [f"f{i}" for i in range(ds.in_dim)]
    with open(path, "w", encoding="ascii", newline="") as f:
        if include_header:
            f.write(",".join([*names, "label"]) + "\n")
        for i in range(ds.n):
            cells = [repr(float(v)) for v in ds.X[i]]
            cells.append(str(int(ds.y[i])))
            f.write(",".join(cells) + "\n")


def load_csv(path, has_header: bool = True) -> LabeledDataset:
    """Parse a CSV whose last column is a non-negative integer label.

    k is inferred as max label + 1; empty classes only warn.
    """
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()
    names = None
    start = 0
    if has_header:
        if not lines:
            raise DataFormatError(f"{path}: empty file")
        header = lines[0].split(",")
        if len(header) < 2:
            raise DataFormatError(f"{path}: line 1: header needs >= 2 columns")
        names = header[:-1]
        start = 1
    rows, labels = [], []
    width = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if line == "":
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
            if width < 2:
                raise DataFormatError(
                    f"{path}: line {lineno}: need at least one feature and a label"
                )
            if names is not None and len(names) != width - 1:
                raise DataFormatError(f"{path}: header/data column count mismatch")
        elif len(cells) != width:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {width} columns, got {len(cells)}"
            )
        try:
            feats = [float(c) for c in cells[:-1]]
        except ValueError:
            raise DataFormatError(
                f"{path}: line {lineno}: non-numeric feature cell"
            ) from None
        if not all(math.isfinite(v) for v in feats):
            raise DataFormatError(f"{path}: line {lineno}: non-finite feature")
        try:
            label = int(cells[-1])
        except ValueError:
            raise DataFormatError(
                f"{path}: line {lineno}: label must be an integer"
            ) from None
        if label < 0:
            raise DataFormatError(f"{path}: line {lineno}: negative label")
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    k = int(y.max()) + 1
    counts = np.bincount(y, minlength=k)
    if (counts == 0).any():
        empty = np.flatnonzero(counts == 0).tolist()
        warnings.warn(f"{path}: classes {empty} have no samples", stacklevel=2)
    return LabeledDataset(X=np.asarray(rows), y=y, k=k, feature_names=names)


_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Classic MNIST layout: big-endian u32 header, u8 payload.

    Pixels are scaled to [0, 1] and images flattened to rows.
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise DataFormatError(f"{images_path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{_IDX_IMAGE_MAGIC:08x}"
        )
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DataFormatError(
            f"{images_path}: expected {expected} bytes, got {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)

    with open(labels_path, "rb") as f:
        raw_l = f.read()
    if len(raw_l) < 8:
        raise DataFormatError(f"{labels_path}: truncated header")
    magic_l, count_l = struct.unpack(">II", raw_l[:8])
    if magic_l != _IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad magic 0x{magic_l:08x}, expected 0x{_IDX_LABEL_MAGIC:08x}"
        )
    if len(raw_l) != 8 + count_l:
        raise DataFormatError(
            f"{labels_path}: expected {8 + count_l} bytes, got {len(raw_l)}"
        )
    if count != count_l:
        raise DataFormatError(
            f"image count {count} != label count {count_l}"
        )
    X = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    y = np.frombuffer(raw_l, dtype=np.uint8, offset=8).astype(np.int64)
    return LabeledDataset(X=X, y=y, k=int(y.max()) + 1)


def standardize(train: LabeledDataset, *others: LabeledDataset):
    """Per-feature zero-mean unit-std transform fit on train only.

    Returns ([train', others'...], stats).
    """
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    scale = np.where(std < 1e-12, 1.0, std)
    stats = FeatureStats(mean=mean, scale=scale)
    out = [apply_stats(stats, ds) for ds in (train, *others)]
    return out, stats


def apply_stats(stats: FeatureStats, ds: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(
        X=(ds.X - stats.mean) / stats.scale,
        y=ds.y.copy(),
        k=ds.k,
        feature_names=ds.feature_names,
    )


def split(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded permutation, then prefix/suffix cut; disjoint and exhaustive."""
    n_train = int(spec.train_fraction * ds.n)
    if n_train < 1 or n_train >= ds.n:
        raise ValueError(
            f"degenerate split: fraction {spec.train_fraction} of {ds.n} samples"
        )
    perm = RngStream(spec.seed).permutation(ds.n)
    tr, va = perm[:n_train], perm[n_train:]
    return (
        LabeledDataset(X=ds.X[tr], y=ds.y[tr], k=ds.k, feature_names=ds.feature_names),
        LabeledDataset(X=ds.X[va], y=ds.y[va], k=ds.k, feature_names=ds.feature_names),
    )


def batch_iter(ds: LabeledDataset, batch_size: int, epoch_seed: int):
    """Yield index batches for one epoch under a seeded shuffle.

    The last partial batch is emitted.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = RngStream(epoch_seed).permutation(ds.n)
    for i in range(0, ds.n, batch_size):
        yield perm[i : i + batch_size]
