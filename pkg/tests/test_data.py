import struct

import numpy as np
import pytest

from marginlab.data import (
    LabeledDataset,
    SplitSpec,
    SyntheticSpec,
    apply_stats,
    batch_iter,
    gen_synthetic,
    load_csv,
    load_idx,
    save_csv,
    split,
    standardize,
)
from marginlab.errors import DataFormatError


class TestBlobs:
    def test_counts_per_label(self):
        spec = SyntheticSpec.blobs(
            centers=[[0, 0], [5, 0], [0, 5]], n_per_class=100, sigma=0.4, seed=1
        )
        ds = gen_synthetic(spec)
        assert ds.n == 300 and ds.k == 3
        assert np.bincount(ds.y).tolist() == [100, 100, 100]

    def test_zero_sigma_hits_centers(self):
        spec = SyntheticSpec.blobs(centers=[[1, 2], [3, 4]], n_per_class=5, sigma=0.0, seed=2)
        ds = gen_synthetic(spec)
        assert np.array_equal(ds.X[:5], np.tile([1.0, 2.0], (5, 1)))
        assert np.array_equal(ds.X[5:], np.tile([3.0, 4.0], (5, 1)))

    def test_deterministic(self):
        spec = SyntheticSpec.blobs(centers=[[0, 0], [3, 3]], n_per_class=20, sigma=1.0, seed=9)
        assert np.array_equal(gen_synthetic(spec).X, gen_synthetic(spec).X)

    def test_far_centers_linearly_separable_by_training(self):
        # separability oracle: a linear CE model fit by the trainer reaches
        # 100% train accuracy when centers are > 10 sigma apart
        from marginlab.harness import TrainConfig, evaluate, train_run
        from marginlab.selector import SelectionConfig, SelectionMode

        spec = SyntheticSpec.blobs(
            centers=[[0, 0], [8, 0], [0, 8]], n_per_class=40, sigma=0.5, seed=3
        )
        ds = gen_synthetic(spec)
        tr, va = split(ds, SplitSpec(0.8, 1))
        cfg = TrainConfig(
            dims=(2, 3),
            activations=(),
            total_steps=800,
            lr_base=0.2,
            selection=SelectionConfig(SelectionMode.RANDOM, 32, 32),
            seed=1,
            eval_every=400,
        )
        res = train_run(cfg, tr, va)
        assert evaluate(res.model, tr)[0] == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec.blobs(centers=[[0, 0], [0, 0]], n_per_class=5, sigma=1.0, seed=0)
        with pytest.raises(ValueError):
            SyntheticSpec.blobs(centers=[[0, 0]], n_per_class=0, sigma=1.0, seed=0)


class TestMoonsRings:
    def test_moons_shape(self):
        ds = gen_synthetic(SyntheticSpec.moons(n=21, noise_sigma=0.0, seed=4))
        assert ds.n == 21 and ds.k == 2
        assert np.bincount(ds.y).tolist() == [11, 10]
        outer = ds.X[ds.y == 0]
        assert np.allclose(np.linalg.norm(outer, axis=1), 1.0, atol=1e-12)

    def test_rings_radii(self):
        ds = gen_synthetic(SyntheticSpec.rings(n=20, radii=(1.0, 3.0), noise_sigma=0.0, seed=5))
        norms = np.linalg.norm(ds.X, axis=1)
        assert np.allclose(norms[ds.y == 0], 1.0, atol=1e-12)
        assert np.allclose(norms[ds.y == 1], 3.0, atol=1e-12)

    def test_rings_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec.rings(n=10, radii=(1.0, 1.0), noise_sigma=0.1, seed=0)


class TestCsv:
    def test_parse_small(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1.0,2.0,0\n3.0,4.0,1\n")
        ds = load_csv(p, has_header=False)
        assert ds.n == 2 and ds.in_dim == 2 and ds.k == 2
        assert np.array_equal(ds.X, [[1.0, 2.0], [3.0, 4.0]])

    def test_empty_file_errors(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(DataFormatError):
            load_csv(p, has_header=False)
        with pytest.raises(DataFormatError):
            load_csv(p, has_header=True)

    def test_write_read_round_trip_bit_exact(self, tmp_path, nprng):
        ds = LabeledDataset(
            X=nprng.standard_normal((30, 4)) * 10.0 ** nprng.integers(-8, 8),
            y=nprng.integers(0, 3, size=30),
            k=3,
        )
        p = tmp_path / "r.csv"
        save_csv(ds, p)
        back = load_csv(p)
        assert np.array_equal(back.X, ds.X)
        assert np.array_equal(back.y, ds.y)
        assert back.k == ds.k

    def test_ragged_row_names_line(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("1.0,2.0,0\n1.0,1\n")
        with pytest.raises(DataFormatError, match="line 2"):
            load_csv(p, has_header=False)

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("a,2.0,0\n")
        with pytest.raises(DataFormatError, match="line 1"):
            load_csv(p, has_header=False)

    def test_negative_label(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("1.0,-1\n")
        with pytest.raises(DataFormatError, match="negative"):
            load_csv(p, has_header=False)

    def test_non_integer_label(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("1.0,0.5\n")
        with pytest.raises(DataFormatError, match="integer"):
            load_csv(p, has_header=False)

    def test_empty_class_warns(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("1.0,0\n2.0,2\n")
        with pytest.warns(UserWarning, match="classes"):
            ds = load_csv(p, has_header=False)
        assert ds.k == 3


def write_idx_pair(tmp_path, images, labels):
    """Independent byte-level IDX writer (big-endian, classic layout)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / "img.idx"
    lbl_path = tmp_path / "lbl.idx"
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.tobytes())
    with open(lbl_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())
    return img_path, lbl_path


class TestIdx:
    def test_golden_round_trip(self, tmp_path):
        images = np.arange(16, dtype=np.uint8).reshape(4, 2, 2)
        labels = np.array([0, 1, 2, 1], dtype=np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, labels)
        ds = load_idx(img, lbl)
        assert ds.n == 4 and ds.in_dim == 4 and ds.k == 3
        assert np.array_equal(ds.y, labels)
        assert np.array_equal(ds.X, images.reshape(4, 4) / 255.0)

    def test_full_byte_scales_to_one(self, tmp_path):
        images = np.full((1, 1, 1), 255, dtype=np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [1])
        assert load_idx(img, lbl).X[0, 0] == 1.0

    def test_count_mismatch(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [0, 1, 1])
        with pytest.raises(DataFormatError, match="count"):
            load_idx(img, lbl)

    def test_wrong_magic(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((1, 1, 1), dtype=np.uint8), [0])
        raw = bytearray(img.read_bytes())
        raw[3] = 0x99
        img.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="magic"):
            load_idx(img, lbl)

    def test_truncated(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1])
        img.write_bytes(img.read_bytes()[:-3])
        with pytest.raises(DataFormatError, match="bytes"):
            load_idx(img, lbl)


class TestStandardize:
    def test_constant_feature_centered_only(self):
        ds = LabeledDataset(
            X=np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]), y=np.zeros(3, int), k=1
        )
        (out,), stats = standardize(ds)
        assert np.allclose(out.X[:, 1], 0.0)
        assert stats.scale[1] == 1.0

    def test_train_mean_near_zero(self, nprng):
        ds = LabeledDataset(
            X=nprng.uniform(-5, 5, (40, 3)) + 100.0, y=nprng.integers(0, 2, 40), k=2
        )
        (out,), _ = standardize(ds)
        assert np.abs(out.X.mean(axis=0)).max() < 1e-10
        assert np.allclose(out.X.std(axis=0), 1.0)

    def test_stats_apply_to_others(self, nprng):
        tr = LabeledDataset(X=nprng.standard_normal((30, 2)), y=nprng.integers(0, 2, 30), k=2)
        va = LabeledDataset(X=nprng.standard_normal((10, 2)), y=nprng.integers(0, 2, 10), k=2)
        (tr2, va2), stats = standardize(tr, va)
        assert np.array_equal(va2.X, (va.X - stats.mean) / stats.scale)

    def test_applying_twice_differs_unless_identity(self, nprng):
        ds = LabeledDataset(
            X=nprng.standard_normal((20, 2)) * 3.0 + 7.0, y=nprng.integers(0, 2, 20), k=2
        )
        (once,), stats = standardize(ds)
        twice = apply_stats(stats, once)
        assert not np.allclose(once.X, twice.X)
        from marginlab.data import FeatureStats

        ident = FeatureStats(mean=np.zeros(2), scale=np.ones(2))
        assert np.array_equal(apply_stats(ident, once).X, once.X)


class TestSplit:
    def test_fraction(self, nprng):
        ds = LabeledDataset(X=nprng.standard_normal((100, 2)), y=nprng.integers(0, 2, 100), k=2)
        tr, va = split(ds, SplitSpec(0.9, 1))
        assert tr.n == 90 and va.n == 10

    def test_same_seed_identical(self, nprng):
        ds = LabeledDataset(X=nprng.standard_normal((50, 2)), y=nprng.integers(0, 2, 50), k=2)
        a = split(ds, SplitSpec(0.8, 5))
        b = split(ds, SplitSpec(0.8, 5))
        assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[1].X, b[1].X)

    def test_union_is_original_multiset(self, nprng):
        ds = LabeledDataset(X=nprng.standard_normal((37, 2)), y=nprng.integers(0, 2, 37), k=2)
        tr, va = split(ds, SplitSpec(0.7, 3))
        merged = np.vstack([tr.X, va.X])
        assert np.array_equal(
            np.sort(merged.view([("", float)] * 2), axis=0),
            np.sort(ds.X.view([("", float)] * 2), axis=0),
        )

    def test_degenerate_fraction_errors(self, nprng):
        ds = LabeledDataset(X=nprng.standard_normal((3, 2)), y=np.zeros(3, int), k=1)
        with pytest.raises(ValueError):
            split(ds, SplitSpec(0.1, 0))


class TestBatchIter:
    def test_single_batch_when_large(self, nprng):
        ds = LabeledDataset(X=nprng.standard_normal((10, 2)), y=nprng.integers(0, 2, 10), k=2)
        batches = list(batch_iter(ds, 64, epoch_seed=1))
        assert len(batches) == 1 and len(batches[0]) == 10

    def test_concatenation_is_permutation(self, nprng):
        ds = LabeledDataset(X=nprng.standard_normal((23, 2)), y=nprng.integers(0, 2, 23), k=2)
        batches = list(batch_iter(ds, 5, epoch_seed=2))
        assert sorted(np.concatenate(batches).tolist()) == list(range(23))
        assert len(batches[-1]) == 3  # partial batch emitted

    def test_epoch_seeds_change_order_not_multiset(self, nprng):
        ds = LabeledDataset(X=nprng.standard_normal((30, 2)), y=nprng.integers(0, 2, 30), k=2)
        a = np.concatenate(list(batch_iter(ds, 7, epoch_seed=1)))
        b = np.concatenate(list(batch_iter(ds, 7, epoch_seed=2)))
        assert not np.array_equal(a, b)
        assert sorted(a.tolist()) == sorted(b.tolist())
