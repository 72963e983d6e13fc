"""SGD training loop, Procrustes chaining, binned model persistence."""
from __future__ import annotations

import numpy as np
import pytest

from diachron import model, synth, trainer
from diachron.dataset import bin_monthly, split
from diachron.errors import CheckpointError, DataError
from diachron.loss import LossConfig, sample_batch_triplets, batch_loss_and_grads
from diachron.numerics import Rng


def tiny_data(seed=0, n=10, months=12, cats=2):
    cfg = synth.SynthConfig(
        n_categories=cats,
        instances_per_category=n,
        months=months,
        d_v=6,
        d_t=5,
        seed=seed,
    )
    ds, _ = synth.generate(cfg)
    return ds


def tiny_model_config(ds, seed=0):
    return model.ModelConfig(
        d_v=ds.d_v, d_t=ds.d_t, hidden_dim=8, time_dim=4, embed_dim=4, seed=seed
    )


class TestTrainConfig:
    def test_defaults_match_training_recipe(self):
        cfg = trainer.TrainConfig()
        assert cfg.learning_rate == 0.005
        assert cfg.momentum == 0.9
        assert cfg.epochs == 25
        assert cfg.batch_size == 64

    def test_bad_values_rejected(self):
        for bad in (
            dict(learning_rate=0.0),
            dict(momentum=-0.1),
            dict(momentum=1.0),
            dict(epochs=0),
            dict(batch_size=1),
        ):
            with pytest.raises(DataError):
                trainer.TrainConfig(**bad).validate()


class TestTrain:
    def test_single_step_without_momentum_is_plain_sgd(self):
        ds = tiny_data()
        mc = tiny_model_config(ds)
        tc = trainer.TrainConfig(
            learning_rate=0.01, momentum=0.0, epochs=1, batch_size=64,
            seed=3, model=mc,
        )
        got, _ = trainer.train_continuous(ds, ds, tc)

        # mirror the loop: one shuffled batch, one gradient, one update
        params = model.init(mc)
        rng = Rng(3)
        rng.split("val")
        order = rng.split("shuffle", 0).shuffled(len(ds))
        batch = [ds.instance(int(i)) for i in order]
        triplets = sample_batch_triplets(batch, rng.split("sample", 0, 0), tc.loss)
        _, grads = batch_loss_and_grads(
            params, batch, triplets, tc.loss, ds.timespan
        )
        for name, arr in params.named_arrays().items():
            want = arr - 0.01 * grads.named_arrays()[name]
            np.testing.assert_array_equal(got.named_arrays()[name], want)

    def test_deterministic_across_runs(self):
        ds = tiny_data(seed=1)
        tc = trainer.TrainConfig(epochs=2, seed=7, model=tiny_model_config(ds))
        a, _ = trainer.train_continuous(ds, ds, tc)
        b, _ = trainer.train_continuous(ds, ds, tc)
        for name, arr in a.named_arrays().items():
            np.testing.assert_array_equal(arr, b.named_arrays()[name])

    def test_loss_decreases(self):
        ds = tiny_data(seed=2, n=30)
        tc = trainer.TrainConfig(epochs=6, seed=0, model=tiny_model_config(ds))
        _, report = trainer.train_continuous(ds, ds, tc)
        assert report.epochs[-1].train_loss < report.epochs[0].train_loss

    def test_selected_epoch_minimizes_validation(self):
        ds = tiny_data(seed=3, n=30)
        tc = trainer.TrainConfig(epochs=5, seed=1, model=tiny_model_config(ds))
        _, report = trainer.train_continuous(ds, ds, tc)
        losses = [e.val_loss for e in report.epochs]
        assert report.selected_epoch == int(np.argmin(losses))

    def test_static_freezes_time_weights(self):
        ds = tiny_data(seed=4, n=20)
        mc = tiny_model_config(ds)
        tc = trainer.TrainConfig(epochs=3, seed=2, model=mc)
        params, _ = trainer.train_static(ds, ds, tc)
        init = model.init(mc)
        np.testing.assert_array_equal(params.w_time, init.w_time)
        # the time bias is a plain trainable constant under a frozen input
        assert not np.array_equal(params.b_time, init.b_time)

    def test_static_and_continuous_differ(self):
        ds = tiny_data(seed=5, n=20)
        tc = trainer.TrainConfig(epochs=2, seed=0, model=tiny_model_config(ds))
        a, _ = trainer.train_continuous(ds, ds, tc)
        b, _ = trainer.train_static(ds, ds, tc)
        assert any(
            not np.array_equal(arr, b.named_arrays()[name])
            for name, arr in a.named_arrays().items()
        )

    def test_dim_mismatch_rejected(self):
        a = tiny_data(seed=6)
        b_cfg = synth.SynthConfig(
            n_categories=2, instances_per_category=5, months=12,
            d_v=7, d_t=5, seed=6,
        )
        b, _ = synth.generate(b_cfg)
        tc = trainer.TrainConfig(epochs=1, model=tiny_model_config(a))
        with pytest.raises(DataError):
            trainer.train_continuous(a, b, tc)

    def test_span_mismatch_rejected(self):
        ds = tiny_data(seed=7)
        other = ds.with_timespan(
            type(ds.timespan)(ds.timespan.t_s - 10.0, ds.timespan.t_f)
        )
        tc = trainer.TrainConfig(epochs=1, model=tiny_model_config(ds))
        with pytest.raises(DataError):
            trainer.train_continuous(ds, other, tc)

    def test_report_csv(self, tmp_path):
        ds = tiny_data(seed=8, n=15)
        tc = trainer.TrainConfig(epochs=3, seed=0, model=tiny_model_config(ds))
        _, report = trainer.train_continuous(ds, ds, tc)
        path = tmp_path / "report.csv"
        report.write_csv(str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        assert len(lines) == 1 + 3


class TestProcrustes:
    def test_identity(self):
        m = np.random.default_rng(0).normal(size=(40, 8))
        omega = trainer.procrustes(m, m)
        np.testing.assert_allclose(omega, np.eye(8), atol=1e-9)

    def test_recovers_planted_rotation(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(200, 32))
        q, _ = np.linalg.qr(rng.normal(size=(32, 32)))
        omega = trainer.procrustes(m, m @ q)
        assert np.linalg.norm(omega - q) < 1e-6

    def test_result_is_orthogonal(self):
        rng = np.random.default_rng(2)
        omega = trainer.procrustes(
            rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
        )
        np.testing.assert_allclose(omega.T @ omega, np.eye(6), atol=1e-10)

    def test_preserves_intra_matrix_cosines(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(30, 5))
        omega = trainer.procrustes(m, rng.normal(size=(30, 5)))
        rotated = m @ omega
        for i in (0, 7, 19):
            for j in (3, 11, 29):
                a = m[i] @ m[j] / (np.linalg.norm(m[i]) * np.linalg.norm(m[j]))
                b = rotated[i] @ rotated[j] / (
                    np.linalg.norm(rotated[i]) * np.linalg.norm(rotated[j])
                )
                assert abs(a - b) < 1e-12

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataError):
            trainer.procrustes(np.ones((4, 3)), np.ones((5, 3)))


def signed_permutation(dim, rng):
    perm = rng.permutation(dim)
    signs = rng.choice([-1.0, 1.0], size=dim)
    p = np.zeros((dim, dim))
    p[np.arange(dim), perm] = signs
    return p


def rotate_output_layer(params, p):
    """A signed permutation of the output layer commutes with tanh exactly."""
    out = params.copy()
    out.w_vo[:] = p @ params.w_vo
    out.b_vo[:] = p @ params.b_vo
    out.w_to[:] = p @ params.w_to
    out.b_to[:] = p @ params.b_to
    return out


class TestAlignChain:
    def make_binned(self, n_models, seed=0):
        ds = tiny_data(seed=seed, n=20, months=n_models, cats=2)
        bins, _ = bin_monthly(ds, 1)
        assert len(bins) == n_models
        mc = tiny_model_config(ds)
        rng = np.random.default_rng(seed)
        models = [model.init(mc)]
        for _ in range(1, len(bins)):
            p = signed_permutation(mc.embed_dim, rng)
            models.append(rotate_output_layer(models[-1], p))
        bm = trainer.BinnedModel(
            config=mc,
            timespan=ds.timespan,
            bins=bins,
            models=models,
            rotations=[np.eye(mc.embed_dim) for _ in bins],
        )
        return ds, bm

    def test_single_bin_is_identity(self):
        ds, bm = self.make_binned(1)
        aligned = trainer.align_chain(bm, ds)
        assert len(aligned.rotations) == 1
        np.testing.assert_array_equal(aligned.rotations[0], np.eye(4))

    def test_planted_rotation_is_undone(self):
        ds, bm = self.make_binned(2, seed=1)
        aligned = trainer.align_chain(bm, ds)
        rows = bm.bins[0].rows
        ev0, et0 = aligned.embed(ds.visual[rows], ds.text[rows], 0)
        u = np.zeros(len(rows))
        ev1, et1 = model.project_batch(
            aligned.models[1], ds.visual[rows], ds.text[rows], u
        )
        assert np.abs(ev0 - ev1).max() < 1e-6
        assert np.abs(et0 - et1).max() < 1e-6

    def test_three_bin_chain_reaches_final_frame(self):
        ds, bm = self.make_binned(3, seed=2)
        aligned = trainer.align_chain(bm, ds)
        np.testing.assert_array_equal(aligned.rotations[-1], np.eye(4))
        for b in range(3):
            rows = bm.bins[b].rows
            ev, _ = aligned.embed(ds.visual[rows], ds.text[rows], b)
            u = np.zeros(len(rows))
            want, _ = model.project_batch(
                aligned.models[-1], ds.visual[rows], ds.text[rows], u
            )
            assert np.abs(ev - want).max() < 1e-6

    def test_alignment_preserves_intra_bin_cosines(self):
        ds, bm = self.make_binned(2, seed=3)
        aligned = trainer.align_chain(bm, ds)
        rows = bm.bins[0].rows
        u = np.zeros(len(rows))
        raw, _ = model.project_batch(
            aligned.models[0], ds.visual[rows], ds.text[rows], u
        )
        rotated = raw @ aligned.rotations[0]
        np.testing.assert_allclose(
            raw @ raw.T, rotated @ rotated.T, atol=1e-12
        )


class TestTrainBinned:
    def run(self, seed=0, perturb_last=False):
        cfg = synth.SynthConfig(
            n_categories=2,
            instances_per_category=30,
            months=3,
            d_v=6,
            d_t=5,
            seed=seed,
        )
        ds, _ = synth.generate(cfg)
        if perturb_last:
            ds = ds.subset(np.arange(len(ds)))  # private copy of the arrays
            bins, _ = bin_monthly(ds, 1)
            ds.visual[bins[-1].rows] += 0.5
        bins, _ = bin_monthly(ds, 1)
        tc = trainer.TrainConfig(
            epochs=2, seed=11, model=tiny_model_config(ds, seed=seed)
        )
        return trainer.train_binned(ds, ds, tc, bins), ds

    def test_structure(self):
        bm, _ = self.run()
        assert len(bm.bins) == len(bm.models) == len(bm.rotations) == 3
        np.testing.assert_array_equal(bm.rotations[-1], np.eye(4))
        for rot in bm.rotations:
            np.testing.assert_allclose(rot.T @ rot, np.eye(4), atol=1e-8)

    def test_bins_train_in_isolation(self):
        a, _ = self.run()
        b, _ = self.run(perturb_last=True)
        for name, arr in a.models[0].named_arrays().items():
            np.testing.assert_array_equal(arr, b.models[0].named_arrays()[name])
        assert any(
            not np.array_equal(arr, b.models[-1].named_arrays()[name])
            for name, arr in a.models[-1].named_arrays().items()
        )

    def test_empty_bins_rejected(self):
        ds = tiny_data()
        tc = trainer.TrainConfig(epochs=1, model=tiny_model_config(ds))
        with pytest.raises(DataError):
            trainer.train_binned(ds, ds, tc, [])

    def test_bin_for_ts_picks_nearest_with_earlier_ties(self):
        bm, ds = self.run()
        assert bm.bin_for_ts(float(bm.bins[0].month_start)) == 0
        assert bm.bin_for_ts(float(bm.bins[-1].month_start) + 1.0) == 2
        before_everything = float(bm.bins[0].month_start) - 100 * 86400.0
        assert bm.bin_for_ts(before_everything) == 0

    def test_bin_for_ts_tie_prefers_earlier(self):
        bm, ds = self.run()
        # keep months 0 and 2 only; a query in the gap month ties
        gapped = trainer.BinnedModel(
            config=bm.config,
            timespan=bm.timespan,
            bins=[bm.bins[0], bm.bins[2]],
            models=[bm.models[0], bm.models[2]],
            rotations=[bm.rotations[0], bm.rotations[2]],
        )
        assert gapped.bin_for_ts(float(bm.bins[1].month_start)) == 0

    def test_save_load_round_trip(self, tmp_path):
        bm, ds = self.run()
        out = tmp_path / "binned"
        trainer.save_binned(bm, str(out))
        again = trainer.load_binned(str(out))
        assert [b.month for b in again.bins] == [b.month for b in bm.bins]
        for m_a, m_b in zip(bm.models, again.models):
            for name, arr in m_a.named_arrays().items():
                np.testing.assert_array_equal(arr, m_b.named_arrays()[name])
        for r_a, r_b in zip(bm.rotations, again.rotations):
            np.testing.assert_array_equal(r_a, r_b)
        xv = ds.visual[:4]
        xt = ds.text[:4]
        np.testing.assert_array_equal(
            bm.embed(xv, xt, 1)[0], again.embed(xv, xt, 1)[0]
        )

    def test_load_missing_manifest(self, tmp_path):
        with pytest.raises((CheckpointError, OSError)):
            trainer.load_binned(str(tmp_path / "nope"))
