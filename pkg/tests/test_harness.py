import math

import numpy as np
import pytest

from marginlab.data import LabeledDataset, SplitSpec, SyntheticSpec, batch_iter, gen_synthetic, split
from marginlab.errors import CheckpointError, ConfigError
from marginlab.harness import (
    TAG_DATA,
    CandidateStream,
    TrainConfig,
    batch_objective,
    compare_runs,
    config_from_dict,
    config_hash,
    config_to_dict,
    evaluate,
    export_embeddings,
    load_checkpoint,
    lr_at,
    min_norm_margin,
    read_metrics_csv,
    run_summary,
    save_checkpoint,
    step_gradients,
    train_run,
    write_metrics_csv,
)
from marginlab.margin import normalized_feature_margin
from marginlab.model import extract_features, forward, init_mlp, sgd_step
from marginlab.numkernel import derive_seed
from marginlab.objective import (
    AlphaSchedule,
    ObjectiveConfig,
    RegKind,
    RiskKind,
    alpha_at,
    phi_max_norm,
)
from marginlab.selector import SelectionConfig, SelectionMode, select_mms


def blob_data(seed=1, n_per=40, spread=4.0, sigma=0.6, k=3):
    centers = [[0.0, 0.0], [spread, 0.0], [0.0, spread]][:k]
    ds = gen_synthetic(SyntheticSpec.blobs(centers=centers, n_per_class=n_per, sigma=sigma, seed=seed))
    return split(ds, SplitSpec(0.8, seed))


def small_cfg(**kw):
    base = dict(
        dims=(2, 3),
        activations=(),
        total_steps=40,
        lr_base=0.1,
        risk=RiskKind.CROSS_ENTROPY,
        reg=RegKind.PMM,
        alpha=AlphaSchedule.constant(1e-3),
        selection=SelectionConfig(SelectionMode.RANDOM, 16, 16),
        seed=7,
        eval_every=10,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestLrAt:
    def test_examples(self):
        cfg = small_cfg(total_steps=300, lr_drop_steps=(100, 200), lr_drop_factor=10.0)
        assert lr_at(cfg, 150) == pytest.approx(0.01)
        assert lr_at(cfg, 0) == 0.1
        assert lr_at(cfg, 99) == 0.1
        assert lr_at(cfg, 100) == pytest.approx(0.01)
        assert lr_at(cfg, 250) == pytest.approx(0.001)

    def test_no_drops(self):
        cfg = small_cfg()
        assert lr_at(cfg, 10_000) == 0.1


class TestConfigValidation:
    def test_drops_must_increase(self):
        with pytest.raises(ConfigError):
            small_cfg(total_steps=100, lr_drop_steps=(50, 50)).validate()

    def test_drops_within_total(self):
        with pytest.raises(ConfigError):
            small_cfg(total_steps=100, lr_drop_steps=(150,)).validate()

    def test_factor_must_exceed_one(self):
        with pytest.raises(ConfigError):
            small_cfg(lr_drop_factor=1.0).validate()

    def test_early_stop_needs_target(self):
        with pytest.raises(ConfigError):
            small_cfg(early_stop=True).validate()

    def test_activation_count(self):
        with pytest.raises(ConfigError):
            TrainConfig(
                dims=(2, 8, 3), activations=(), total_steps=1, lr_base=0.1
            ).validate()


class TestTrainRunBasics:
    def test_zero_steps_single_record(self):
        tr, va = blob_data()
        res = train_run(small_cfg(total_steps=0), tr, va)
        assert len(res.metrics) == 1
        assert res.metrics[0].step == 0
        assert res.metrics[0].risk_sum is None
        # untrained: parameters equal a fresh init
        fresh = init_mlp((2, 3), (), derive_seed(7, 1))
        assert np.array_equal(res.model.head.W, fresh.head.W)

    def test_metrics_steps(self):
        tr, va = blob_data()
        res = train_run(small_cfg(total_steps=25, eval_every=10), tr, va)
        assert [m.step for m in res.metrics] == [0, 10, 20, 25]

    def test_alpha_and_lr_columns(self):
        tr, va = blob_data()
        cfg = small_cfg(
            total_steps=20,
            eval_every=10,
            alpha=AlphaSchedule.linear(1e-5, 1e-3, 20),
            lr_drop_steps=(15,),
        )
        res = train_run(cfg, tr, va)
        recs = {m.step: m for m in res.metrics}
        assert recs[0].alpha == 1e-5
        assert recs[10].alpha == alpha_at(cfg.alpha, 9)
        assert recs[20].alpha == alpha_at(cfg.alpha, 19)
        assert recs[20].lr == pytest.approx(0.01)

    def test_random_full_batch_equals_plain_sgd(self):
        # selection mode random with b == B must reduce to classic minibatch
        # SGD, reproduced here with a hand-rolled loop
        tr, va = blob_data(seed=3)
        cfg = small_cfg(total_steps=30, selection=SelectionConfig(SelectionMode.RANDOM, 16, 16))
        res = train_run(cfg, tr, va)

        model = init_mlp(cfg.dims, cfg.activations, derive_seed(cfg.seed, 1))
        obj_cfg = ObjectiveConfig(
            risk=cfg.risk, reg=cfg.reg, weight_decay_coef=cfg.weight_decay_coef,
            phi_max_mode=cfg.phi_max_mode,
        )
        stream = CandidateStream(tr.n, 16, cfg.seed)
        for t in range(1, 31):
            idx = stream.next_batch()
            trace = forward(model, tr.X[idx])
            grads = step_gradients(model, trace, tr.y[idx], obj_cfg, alpha_at(cfg.alpha, t - 1))
            sgd_step(model, grads, lr_at(cfg, t - 1))
        assert np.array_equal(res.model.head.W, model.head.W)
        assert np.array_equal(res.model.head.b, model.head.b)

    def test_candidate_stream_matches_batch_iter(self):
        tr, _ = blob_data()
        stream = CandidateStream(tr.n, 16, run_seed=5)
        got = [stream.next_batch() for _ in range(math.ceil(tr.n / 16))]
        expect = list(batch_iter(tr, 16, derive_seed(5, TAG_DATA, 0)))
        assert all(np.array_equal(a, b) for a, b in zip(got, expect))
        # crossing into the next epoch re-shuffles deterministically
        nxt = stream.next_batch()
        expect2 = next(iter(batch_iter(tr, 16, derive_seed(5, TAG_DATA, 1))))
        assert np.array_equal(nxt, expect2)

    def test_separable_blobs_reach_zero_train_error(self):
        tr, va = blob_data(seed=11, spread=7.0, sigma=0.4)
        cfg = small_cfg(total_steps=2000, eval_every=1000, lr_base=0.1)
        res = train_run(cfg, tr, va)
        assert res.metrics[-1].train_error == 0.0

    def test_data_dim_checked(self):
        tr, va = blob_data()
        with pytest.raises(ConfigError):
            train_run(small_cfg(dims=(3, 3)), tr, va)

    @pytest.mark.parametrize("mode", [SelectionMode.RANDOM, SelectionMode.MMS])
    def test_partial_candidate_batches(self, mode):
        # train n = 144; B = 50 leaves a 44-sample tail each epoch, smaller
        # than b = 48, so selection must shrink to the tail
        tr, va = blob_data(n_per=60)
        assert tr.n == 144
        cfg = small_cfg(
            total_steps=9, eval_every=9,
            selection=SelectionConfig(mode, 50, 48),
        )
        res = train_run(cfg, tr, va, log_selection=True)
        sizes = [len(s.selected) for s in res.selection_log]
        cands = [len(s.candidates) for s in res.selection_log]
        assert cands == [50, 50, 44, 50, 50, 44, 50, 50, 44]
        assert sizes == [48, 48, 44, 48, 48, 44, 48, 48, 44]


class TestDeterminismAndResume:
    def test_bit_identical_reruns(self, tmp_path):
        tr, va = blob_data(seed=5)
        cfg = small_cfg(total_steps=30, selection=SelectionConfig(SelectionMode.MMS, 24, 8))
        paths = []
        for tag in ("a", "b"):
            res = train_run(cfg, tr, va)
            mp = tmp_path / f"metrics_{tag}.csv"
            cp = tmp_path / f"ckpt_{tag}.bin"
            write_metrics_csv(res.metrics, mp)
            save_checkpoint(cp, res.model, cfg, res.state)
            paths.append((mp, cp))
        assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
        assert paths[0][1].read_bytes() == paths[1][1].read_bytes()

    @pytest.mark.parametrize("mode", [SelectionMode.RANDOM, SelectionMode.MMS])
    def test_resume_equals_uninterrupted(self, tmp_path, mode):
        tr, va = blob_data(seed=6)
        cfg = small_cfg(
            total_steps=40, eval_every=10,
            selection=SelectionConfig(mode, 24, 8),
        )
        full = train_run(cfg, tr, va)

        half_cfg = small_cfg(
            total_steps=20, eval_every=10,
            selection=SelectionConfig(mode, 24, 8),
        )
        half = train_run(half_cfg, tr, va)
        p = tmp_path / "half.bin"
        save_checkpoint(p, half.model, cfg, half.state)
        model, cfg2, state = load_checkpoint(p)
        resumed = train_run(cfg2, tr, va, model=model, state=state)

        merged = half.metrics + resumed.metrics
        assert [m.step for m in merged] == [m.step for m in full.metrics]
        mp1, mp2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        write_metrics_csv(merged, mp1)
        write_metrics_csv(full.metrics, mp2)
        assert mp1.read_bytes() == mp2.read_bytes()
        assert np.array_equal(resumed.model.head.W, full.model.head.W)
        for la, lb in zip(resumed.model.body, full.model.body):
            assert np.array_equal(la.W, lb.W)


class TestCheckpointFile:
    def _make(self, tmp_path):
        tr, va = blob_data()
        cfg = small_cfg(total_steps=5, eval_every=5)
        res = train_run(cfg, tr, va)
        p = tmp_path / "c.bin"
        save_checkpoint(p, res.model, cfg, res.state)
        return p, res, cfg

    def test_round_trip_bit_equal_params(self, tmp_path):
        p, res, cfg = self._make(tmp_path)
        model, cfg2, state = load_checkpoint(p)
        assert cfg2 == cfg
        assert state == res.state
        for a, b in zip(model.parameters(), res.model.parameters()):
            assert np.array_equal(a, b)

    def test_save_load_save_byte_identical(self, tmp_path):
        p, res, cfg = self._make(tmp_path)
        model, cfg2, state = load_checkpoint(p)
        p2 = tmp_path / "c2.bin"
        save_checkpoint(p2, model, cfg2, state)
        assert p.read_bytes() == p2.read_bytes()

    def test_wrong_magic(self, tmp_path):
        p, _, _ = self._make(tmp_path)
        raw = bytearray(p.read_bytes())
        raw[0] = ord("X")
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_wrong_version(self, tmp_path):
        p, _, _ = self._make(tmp_path)
        raw = bytearray(p.read_bytes())
        raw[4] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)

    def test_truncation(self, tmp_path):
        p, _, _ = self._make(tmp_path)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(CheckpointError, match="length"):
            load_checkpoint(p)

    def test_corruption_fails_checksum(self, tmp_path):
        p, _, _ = self._make(tmp_path)
        raw = bytearray(p.read_bytes())
        raw[-1] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(p)


class TestBookkeepingInvariants:
    def test_logged_objective_recomputable_from_checkpoint(self):
        # metrics at step t carry the objective of the batch trained between
        # model states t-1 and t; recompute it from a run stopped at t-1
        tr, va = blob_data(seed=8)
        t_probe = 7
        cfg = small_cfg(
            total_steps=t_probe, eval_every=1,
            selection=SelectionConfig(SelectionMode.MMS, 24, 8),
        )
        full = train_run(cfg, tr, va, log_selection=True)
        rec = full.metrics[-1]
        sel = full.selection_log[-1]
        assert sel.step == t_probe

        prev = train_run(small_cfg(
            total_steps=t_probe - 1, eval_every=1,
            selection=SelectionConfig(SelectionMode.MMS, 24, 8),
        ), tr, va)
        feats = extract_features(prev.model, tr.X[sel.selected])
        obj = batch_objective(
            prev.model, feats, tr.y[sel.selected],
            ObjectiveConfig(risk=cfg.risk, reg=cfg.reg,
                            weight_decay_coef=cfg.weight_decay_coef,
                            phi_max_mode=cfg.phi_max_mode),
            alpha_at(cfg.alpha, t_probe - 1),
        )
        assert math.isclose(obj.risk_sum, rec.risk_sum, rel_tol=1e-10, abs_tol=1e-10)
        assert math.isclose(obj.reg_sum, rec.reg_sum, rel_tol=1e-10, abs_tol=1e-10)

    def test_mms_selection_conformance(self):
        # trained-on indices at step t equal select_mms on that step's
        # candidate batch, evaluated at the step t-1 model
        tr, va = blob_data(seed=9)
        t_probe = 5
        sel_cfg = SelectionConfig(SelectionMode.MMS, 24, 8)
        full = train_run(
            small_cfg(total_steps=t_probe, eval_every=t_probe, selection=sel_cfg),
            tr, va, log_selection=True,
        )
        log = full.selection_log[-1]
        prev = train_run(
            small_cfg(total_steps=t_probe - 1, eval_every=t_probe, selection=sel_cfg),
            tr, va,
        )
        trace = forward(prev.model, tr.X[log.candidates])
        sel = select_mms(trace.scores, prev.model.head, 8)
        assert np.array_equal(sel.indices, log.selected_pos)
        assert np.array_equal(log.candidates[sel.indices], log.selected)


class TestEvaluate:
    def test_perfect_and_constant_predictors(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [0.1, 1.0]])
        y = np.array([0, 1, 0, 1])
        ds = LabeledDataset(X=X, y=y, k=2)
        perfect = init_mlp((2, 2), (), seed=0)
        perfect.head.W[:] = np.eye(2)
        perfect.head.b[:] = 0.0
        err, conf = evaluate(perfect, ds)
        assert err == 0.0
        assert conf.tolist() == [[2, 0], [0, 2]]

        constant = init_mlp((2, 2), (), seed=0)
        constant.head.W[:] = 0.0
        constant.head.b[:] = np.array([1.0, 0.0])
        err_c, conf_c = evaluate(constant, ds)
        assert err_c == 0.5
        assert conf_c.tolist() == [[2, 0], [2, 0]]

    def test_confusion_row_sums_match_class_counts(self, nprng):
        tr, va = blob_data(seed=10)
        model = init_mlp((2, 3), (), seed=1)
        _, conf = evaluate(model, va)
        assert np.array_equal(conf.sum(axis=1), np.bincount(va.y, minlength=3))


class TestMinNormMargin:
    def test_bitwise_matches_per_sample_op(self):
        tr, va = blob_data(seed=12)
        model = init_mlp((2, 8, 3), ("tanh",), seed=2)
        got = min_norm_margin(model, va)
        phi = extract_features(model, va.X)
        norm, _ = phi_max_norm(phi)
        vals = [
            normalized_feature_margin(model.head, phi[i], int(va.y[i]), norm)
            for i in range(va.n)
        ]
        assert got == min(vals)


class TestEmbeddings:
    def test_export_round_trip(self, tmp_path):
        tr, va = blob_data(seed=13)
        model = init_mlp((2, 6, 3), ("relu",), seed=3)
        p = tmp_path / "emb.csv"
        export_embeddings(model, va, p)
        lines = p.read_text().splitlines()
        assert len(lines) == va.n + 1
        assert lines[0].split(",")[-2:] == ["label", "pred"]
        phi = extract_features(model, va.X)
        for i, line in enumerate(lines[1:]):
            cells = line.split(",")
            back = np.array([float(c) for c in cells[:-2]])
            assert np.array_equal(back, phi[i])
            assert int(cells[-2]) == va.y[i]

    def test_empty_body_exports_raw_inputs(self, tmp_path):
        tr, va = blob_data(seed=14)
        model = init_mlp((2, 3), (), seed=4)
        p = tmp_path / "emb.csv"
        export_embeddings(model, va, p)
        first = p.read_text().splitlines()[1].split(",")
        assert np.array_equal(
            np.array([float(c) for c in first[:-2]]), va.X[0]
        )


class TestMetricsCsv:
    def test_round_trip(self, tmp_path):
        tr, va = blob_data(seed=15)
        res = train_run(small_cfg(total_steps=12, eval_every=5), tr, va)
        p = tmp_path / "m.csv"
        write_metrics_csv(res.metrics, p)
        back = read_metrics_csv(p)
        assert back == res.metrics


class TestCompareRuns:
    def test_identical_configs_tie(self):
        cfg = small_cfg(total_steps=15, eval_every=5, target_val_accuracy=0.9)

        def data_fn(seed):
            return blob_data(seed=seed)

        res = compare_runs(cfg, cfg, data_fn, n_seeds=2)
        assert len(res.outcomes) == 2
        for o in res.outcomes:
            assert o.summary_a.final_val_accuracy == o.summary_b.final_val_accuracy
            assert o.min_margin_a == o.min_margin_b
            assert o.summary_a.steps_to_target == o.summary_b.steps_to_target
        assert res.accuracy_wins == (0, 0, 2)
        assert res.margin_wins == (0, 0, 2)
        assert res.steps_wins == (0, 0, 2)

    def test_single_seed_row(self):
        cfg_a = small_cfg(total_steps=10, eval_every=5)
        cfg_b = small_cfg(total_steps=10, eval_every=5, reg=RegKind.WEIGHT_DECAY)
        res = compare_runs(cfg_a, cfg_b, lambda s: blob_data(seed=s), n_seeds=1)
        assert len(res.outcomes) == 1
        assert res.outcomes[0].summary_a.config_hash != res.outcomes[0].summary_b.config_hash


class TestConfigDict:
    def test_round_trip_and_hash_stability(self):
        cfg = small_cfg(
            alpha=AlphaSchedule.linear(1e-5, 1e-3, 40),
            lr_drop_steps=(20, 30),
            target_val_accuracy=0.95,
        )
        d = config_to_dict(cfg)
        cfg2 = config_from_dict(d)
        assert cfg2 == cfg
        assert config_hash(cfg2) == config_hash(cfg)
        assert config_hash(small_cfg(seed=8)) != config_hash(small_cfg(seed=9))

    def test_bad_payload(self):
        d = config_to_dict(small_cfg())
        d.pop("dims")
        with pytest.raises(ConfigError):
            config_from_dict(d)


class TestEarlyStop:
    def test_stops_at_target(self):
        tr, va = blob_data(seed=16, spread=8.0, sigma=0.4)
        cfg = small_cfg(
            total_steps=4000, eval_every=20, lr_base=0.3,
            target_val_accuracy=0.99, early_stop=True,
        )
        res = train_run(cfg, tr, va)
        assert res.state.step < 4000
        assert 1.0 - res.metrics[-1].val_error >= 0.99


class TestRunSummary:
    def test_fields(self):
        tr, va = blob_data(seed=17)
        cfg = small_cfg(total_steps=20, eval_every=5, target_val_accuracy=0.5)
        res = train_run(cfg, tr, va)
        s = run_summary(cfg, res.metrics)
        assert s.run_id.endswith("-s7")
        assert s.config_hash == config_hash(cfg)
        assert 0.0 <= s.final_val_accuracy <= 1.0
        if s.steps_to_target is not None:
            assert any(
                m.step == s.steps_to_target and 1 - m.val_error >= 0.5
                for m in res.metrics
            )
