"""Planted-structure generator: patterns, shifts, and their oracles."""
from __future__ import annotations

import numpy as np
import pytest

from diachron import synth
from diachron.dataset import month_number, month_start_epoch
from diachron.errors import DataError


class TestPatterns:
    def test_parse(self):
        assert synth.parse_pattern("uniform") == synth.UniformPattern()
        assert synth.parse_pattern("spike:6:2") == synth.Spike(6, 2)
        assert synth.parse_pattern("recurrent:8") == synth.Recurrent(8)

    def test_parse_rejects_garbage(self):
        with pytest.raises(DataError):
            synth.parse_pattern("sawtooth:3")

    def test_json_round_trip(self):
        for p in (synth.UniformPattern(), synth.Spike(6, 2), synth.Recurrent(8)):
            assert synth.pattern_from_json(p.to_json()) == p


class TestConfig:
    def test_defaults_validate(self):
        synth.SynthConfig().validate()

    def test_changepoint_must_be_inside_range(self):
        with pytest.raises(DataError):
            synth.SynthConfig(months=24, shift_spec=((0, 24),)).validate()
        with pytest.raises(DataError):
            synth.SynthConfig(months=24, shift_spec=((0, 0),)).validate()

    def test_separation_positive(self):
        with pytest.raises(DataError):
            synth.SynthConfig(cluster_separation=0.0).validate()

    def test_json_round_trip(self):
        cfg = synth.shifted_config(3)
        assert synth.SynthConfig.from_json(cfg.to_json()) == cfg


class TestGenerate:
    def test_counts_balanced(self):
        cfg = synth.SynthConfig(
            n_categories=2, instances_per_category=50, months=6, seed=0
        )
        ds, _ = synth.generate(cfg)
        assert len(ds) == 100
        assert np.bincount(ds.category).tolist() == [50, 50]

    def test_same_seed_bitwise_identical(self):
        cfg = synth.SynthConfig(
            n_categories=2, instances_per_category=30, months=6, seed=9
        )
        a, _ = synth.generate(cfg)
        b, _ = synth.generate(cfg)
        assert a.ids == b.ids
        np.testing.assert_array_equal(a.visual, b.visual)
        np.testing.assert_array_equal(a.text, b.text)
        np.testing.assert_array_equal(a.ts, b.ts)

    def test_different_seeds_differ(self):
        base = dict(n_categories=2, instances_per_category=30, months=6)
        a, _ = synth.generate(synth.SynthConfig(seed=1, **base))
        b, _ = synth.generate(synth.SynthConfig(seed=2, **base))
        assert not np.array_equal(a.visual, b.visual)

    def test_timestamps_inside_declared_range(self):
        cfg = synth.SynthConfig(
            n_categories=2, instances_per_category=50, months=6, seed=0
        )
        ds, _ = synth.generate(cfg)
        start = month_start_epoch(cfg.start_number())
        end = month_start_epoch(cfg.start_number() + cfg.months)
        assert ds.ts.min() >= start
        assert ds.ts.max() < end
        assert ds.timespan.t_s == start and ds.timespan.t_f == end

    def test_dims(self):
        cfg = synth.SynthConfig(
            n_categories=2, instances_per_category=20, months=6,
            d_v=10, d_t=7, seed=0,
        )
        ds, _ = synth.generate(cfg)
        assert ds.d_v == 10 and ds.d_t == 7


class TestSpikeMarginal:
    def test_mass_concentrates_at_center(self):
        cfg = synth.SynthConfig(
            n_categories=1,
            instances_per_category=500,
            months=24,
            patterns=(synth.Spike(10, 2),),
            seed=4,
        )
        ds, _ = synth.generate(cfg)
        lo = month_start_epoch(cfg.start_number() + 10 - 4)
        hi = month_start_epoch(cfg.start_number() + 10 + 4)
        inside = np.mean((ds.ts >= lo) & (ds.ts <= hi))
        assert inside >= 0.90  # spike(c, w): >= 90% within c +/- 2w


class TestRecurrentMarginal:
    def test_mass_returns_each_period(self):
        cfg = synth.SynthConfig(
            n_categories=1,
            instances_per_category=600,
            months=24,
            patterns=(synth.Recurrent(8),),
            seed=4,
        )
        ds, _ = synth.generate(cfg)
        idx = np.asarray(
            [month_number(t) - cfg.start_number() for t in ds.ts]
        )
        assert set(np.unique(idx)) == {0, 8, 16}


class TestStationarity:
    def test_text_centroid_stable_without_shift(self):
        cfg = synth.SynthConfig(
            n_categories=2, instances_per_category=500, months=24, seed=6
        )
        ds, _ = synth.generate(cfg)
        mid = month_start_epoch(cfg.start_number() + 12)
        for c in range(2):
            rows = np.nonzero(ds.category == c)[0]
            first = ds.text[rows[ds.ts[rows] < mid]].mean(axis=0)
            second = ds.text[rows[ds.ts[rows] >= mid]].mean(axis=0)
            assert np.linalg.norm(first - second) < cfg.noise_sigma


class TestChangepoint:
    def test_text_centroid_swaps_visual_stays(self):
        cfg = synth.SynthConfig(
            n_categories=2,
            instances_per_category=500,
            months=24,
            shift_spec=((0, 12),),
            seed=7,
        )
        ds, truth = synth.generate(cfg)
        cp = month_start_epoch(cfg.start_number() + 12)
        rows = np.nonzero(ds.category == 0)[0]
        pre = rows[ds.ts[rows] < cp]
        post = rows[ds.ts[rows] >= cp]
        # text: two planted centroids, far apart
        pre_c = ds.text[pre].mean(axis=0)
        post_c = ds.text[post].mean(axis=0)
        assert np.linalg.norm(pre_c - post_c) > cfg.cluster_separation
        np.testing.assert_allclose(pre_c, truth.text_centroids[0], atol=0.5)
        np.testing.assert_allclose(
            post_c, truth.shifted_text_centroids[0], atol=0.5
        )
        # visual: one centroid throughout
        assert (
            np.linalg.norm(
                ds.visual[pre].mean(axis=0) - ds.visual[post].mean(axis=0)
            )
            < cfg.noise_sigma
        )

    def test_era_is_a_coin_flip_without_time(self):
        """Era membership cannot be predicted from the stationary modality.

        Centroids are estimated on held-out rows (even indices) and scored on
        the rest; with the visual distribution identical pre and post shift,
        nearest-centroid assignment of post-shift instances is chance, while
        an oracle holding the true pre/post text centroids is near perfect.
        """
        cfg = synth.SynthConfig(
            n_categories=2,
            instances_per_category=500,
            months=24,
            shift_spec=((0, 12),),
            seed=7,
        )
        ds, truth = synth.generate(cfg)
        cp = month_start_epoch(cfg.start_number() + 12)
        rows = np.nonzero(ds.category == 0)[0]
        est, score = rows[::2], rows[1::2]
        c_pre = ds.visual[est[ds.ts[est] < cp]].mean(axis=0)
        c_post = ds.visual[est[ds.ts[est] >= cp]].mean(axis=0)
        post = score[ds.ts[score] >= cp]
        guessed_post = np.linalg.norm(
            ds.visual[post] - c_post, axis=1
        ) < np.linalg.norm(ds.visual[post] - c_pre, axis=1)
        agnostic = float(np.mean(guessed_post))
        assert 0.30 <= agnostic <= 0.70

        old_c = truth.text_centroids[0]
        new_c = truth.shifted_text_centroids[0]
        aware = float(
            np.mean(
                np.linalg.norm(ds.text[post] - new_c, axis=1)
                < np.linalg.norm(ds.text[post] - old_c, axis=1)
            )
        )
        assert aware > 0.95


class TestGroundTruth:
    def test_era_and_centroid_lookup(self):
        cfg = synth.SynthConfig(
            n_categories=2,
            instances_per_category=20,
            months=24,
            shift_spec=((1, 12),),
            seed=0,
        )
        _, truth = synth.generate(cfg)
        assert truth.changepoint(0) is None
        assert truth.changepoint(1) == 12
        before = truth.text_centroid_at(1, 11.0)
        after = truth.text_centroid_at(1, 12.0)
        np.testing.assert_array_equal(before, truth.text_centroids[1])
        np.testing.assert_array_equal(after, truth.shifted_text_centroids[1])
        assert synth.era_of(truth, 1, month_start_epoch(cfg.start_number())) == 0
        assert (
            synth.era_of(truth, 1, month_start_epoch(cfg.start_number() + 13)) == 1
        )

    def test_presets(self):
        shifted = synth.shifted_config(1)
        assert shifted.shift_spec
        stationary = synth.stationary_config(1)
        assert not stationary.shift_spec
        assert any(
            isinstance(p, synth.Spike) for p in shifted.resolved_patterns()
        )
