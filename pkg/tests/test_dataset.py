"""Corpus loading, featurization, time handling, binning, splitting."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diachron import dataset as dm
from diachron.errors import DataError, OutOfSpanError, ParseError
from diachron.numerics import Rng


def write_lines(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def record(i, ts, category="cat", d_v=3, d_t=2):
    return {
        "id": f"r{i:03d}",
        "ts": ts,
        "category": category,
        "visual": [float(i)] * d_v,
        "text": [float(i) + 0.5] * d_t,
    }


class TestTimespan:
    def test_boundaries(self):
        span = dm.Timespan(100.0, 200.0)
        assert dm.normalize_ts(100.0, span) == 0.0
        assert dm.normalize_ts(200.0, span) == 1.0
        assert dm.normalize_ts(150.0, span) == 0.5

    def test_outside_raises(self):
        span = dm.Timespan(0.0, 10.0)
        with pytest.raises(OutOfSpanError):
            dm.normalize_ts(-1.0, span)
        with pytest.raises(OutOfSpanError):
            dm.normalize_ts(11.0, span)

    def test_clamp(self):
        span = dm.Timespan(0.0, 10.0)
        assert dm.normalize_ts(-5.0, span, clamp=True) == 0.0
        assert dm.normalize_ts(25.0, span, clamp=True) == 1.0

    def test_empty_span_rejected(self):
        with pytest.raises(DataError):
            dm.Timespan(5.0, 5.0)

    @given(st.floats(0.0, 1.0))
    def test_normalized_in_unit_interval(self, frac):
        span = dm.Timespan(50.0, 250.0)
        u = dm.normalize_ts(50.0 + frac * 200.0, span)
        assert 0.0 <= u <= 1.0


class TestTimestampParsing:
    def test_iso_with_zulu(self):
        # same instant expressed three ways
        a = dm.parse_timestamp("2017-03-01T00:00:00Z")
        b = dm.parse_timestamp("2017-03-01T00:00:00+00:00")
        c = dm.parse_timestamp("2017-03-01T01:00:00+01:00")
        assert a == b == c

    def test_epoch_seconds(self):
        assert dm.parse_timestamp("1488326400") == 1488326400.0

    def test_garbage_rejected(self):
        with pytest.raises(ParseError):
            dm.parse_timestamp("not-a-time")


class TestVocabulary:
    def test_hand_idf(self):
        vocab = dm.build_vocabulary([["a", "b"], ["a"]], vocab_size=10)
        weights = vocab.featurize([["a", "b"], ["a"]])
        idf_b = math.log(2 / 1)
        i_a = vocab.tokens.index("a")
        i_b = vocab.tokens.index("b")
        assert weights[0, i_a] == 0.0  # idf(a) = ln(2/2) = 0
        assert weights[1, i_a] == 0.0
        assert weights[0, i_b] == pytest.approx(idf_b, abs=1e-12)
        assert weights[1, i_b] == 0.0

    def test_single_doc_all_zero(self):
        vocab = dm.build_vocabulary([["x", "y", "x"]], vocab_size=10)
        weights = vocab.featurize([["x", "y"]])
        np.testing.assert_array_equal(weights, np.zeros_like(weights))

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        alphabet = [f"w{i}" for i in range(12)]
        docs = [
            [alphabet[j] for j in rng.integers(0, 12, size=rng.integers(1, 15))]
            for _ in range(20)
        ]
        vocab = dm.build_vocabulary(docs, vocab_size=100)
        got = vocab.featurize(docs)

        # oracle: df by membership, idf = ln(N/df), weight = raw count * idf
        df = {}
        for doc in docs:
            for tok in set(doc):
                df[tok] = df.get(tok, 0) + 1
        n = len(docs)
        want = np.zeros_like(got)
        for r, doc in enumerate(docs):
            for tok in doc:
                if tok in vocab.tokens:
                    col = vocab.tokens.index(tok)
                    want[r, col] += math.log(n / df[tok])
        np.testing.assert_array_equal(got, want)

    def test_truncation_keeps_most_frequent(self):
        docs = [["common", "rare1"], ["common", "rare2"], ["common"]]
        vocab = dm.build_vocabulary(docs, vocab_size=1)
        assert vocab.tokens == ("common",)

    def test_frequency_ties_break_lexicographically(self):
        docs = [["b", "a"], ["a", "b"]]
        vocab = dm.build_vocabulary(docs, vocab_size=1)
        assert vocab.tokens == ("a",)

    def test_unknown_tokens_dropped(self):
        vocab = dm.build_vocabulary([["a"], ["a", "b"]], vocab_size=10)
        weights = vocab.featurize([["zzz", "b"]])
        assert weights[0, vocab.tokens.index("b")] > 0.0
        assert weights.shape[1] == len(vocab)

    def test_json_round_trip(self):
        vocab = dm.build_vocabulary([["a", "b"], ["b", "c"]], vocab_size=3)
        again = dm.Vocabulary.from_json(vocab.to_json())
        assert again.tokens == vocab.tokens
        np.testing.assert_array_equal(again.idf, vocab.idf)


class TestLoadJsonl:
    def test_three_valid_lines(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [record(i, 1000.0 * (i + 1)) for i in range(3)])
        ds = dm.load_jsonl(str(path))
        assert len(ds) == 3
        assert ds.d_v == 3 and ds.d_t == 2

    def test_dimension_error_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        recs = [record(0, 1000.0), record(1, 2000.0)]
        recs[1]["visual"] = [1.0, 2.0]  # d_v=2 instead of 3
        write_lines(path, recs)
        with pytest.raises(ParseError, match=r":2: visual dim"):
            dm.load_jsonl(str(path))

    def test_timespan_is_min_max_regardless_of_order(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(
            path, [record(0, 5000.0), record(1, 1000.0), record(2, 3000.0)]
        )
        ds = dm.load_jsonl(str(path))
        assert ds.timespan.t_s == 1000.0
        assert ds.timespan.t_f == 5000.0

    def test_iso_timestamps_accepted(self, tmp_path):
        path = tmp_path / "d.jsonl"
        recs = [record(0, "2017-03-01T00:00:00Z"), record(1, "2017-05-01T12:00:00+00:00")]
        write_lines(path, recs)
        ds = dm.load_jsonl(str(path))
        assert ds.timespan.t_s == dm.parse_timestamp("2017-03-01T00:00:00Z")

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        recs = [record(0, 1000.0), record(0, 2000.0)]
        write_lines(path, recs)
        with pytest.raises(DataError):
            dm.load_jsonl(str(path))

    def test_missing_field_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        rec = record(0, 1000.0)
        del rec["category"]
        write_lines(path, [rec, record(1, 2000.0)])
        with pytest.raises(ParseError, match=r":1: missing field"):
            dm.load_jsonl(str(path))

    def test_all_identical_timestamps_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [record(0, 1000.0), record(1, 1000.0)])
        with pytest.raises(DataError):
            dm.load_jsonl(str(path))

    def test_token_text_goes_through_vocabulary(self, tmp_path):
        path = tmp_path / "d.jsonl"
        recs = []
        for i in range(3):
            rec = record(i, 1000.0 * (i + 1))
            del rec["text"]
            rec["text_tokens"] = ["alpha", "beta"] if i else ["alpha"]
            recs.append(rec)
        write_lines(path, recs)
        ds = dm.load_jsonl(str(path), vocab_size=8)
        assert ds.vocabulary is not None
        assert ds.d_t == len(ds.vocabulary)

    def test_mixing_text_kinds_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        rec0 = record(0, 1000.0)
        rec1 = record(1, 2000.0)
        del rec1["text"]
        rec1["text_tokens"] = ["a"]
        write_lines(path, [rec0, rec1])
        with pytest.raises(ParseError):
            dm.load_jsonl(str(path))

    def test_round_trip(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [record(i, 1000.0 * (i + 1)) for i in range(4)])
        ds = dm.load_jsonl(str(path))
        out = tmp_path / "copy.jsonl"
        dm.write_jsonl(ds, str(out))
        again = dm.load_jsonl(str(out))
        assert again.ids == ds.ids
        np.testing.assert_array_equal(again.visual, ds.visual)
        np.testing.assert_array_equal(again.text, ds.text)
        np.testing.assert_allclose(again.ts, ds.ts, atol=1e-6)


class TestMonths:
    def test_month_number_round_trip(self):
        for n in (0, 1, 565, 600, -12):
            assert dm.month_number(dm.month_start_epoch(n)) == n

    def test_labels(self):
        assert dm.month_label(dm.month_number(dm.parse_timestamp("2017-03-15T00:00:00Z"))) == "2017-03"


class TestBinning:
    def build(self, tmp_path, ts_list):
        path = tmp_path / "d.jsonl"
        write_lines(path, [record(i, ts) for i, ts in enumerate(ts_list)])
        return dm.load_jsonl(str(path))

    def test_empty_months_dropped(self, tmp_path):
        ds = self.build(
            tmp_path,
            [
                "2017-03-05T00:00:00Z",
                "2017-03-20T00:00:00Z",
                "2017-05-10T00:00:00Z",
            ],
        )
        bins, excluded = dm.bin_monthly(ds, 1)
        assert len(bins) == 2
        assert [b.month for b in bins] == ["2017-03", "2017-05"]
        assert [b.index for b in bins] == [0, 1]
        assert excluded == []

    def test_min_size_filters_all(self, tmp_path):
        ds = self.build(
            tmp_path, ["2017-03-05T00:00:00Z", "2017-04-05T00:00:00Z"]
        )
        bins, excluded = dm.bin_monthly(ds, 100)
        assert bins == []
        assert sorted(excluded) == sorted(ds.ids)

    def test_boundary_instants_go_to_adjacent_bins(self, tmp_path):
        ds = self.build(
            tmp_path, ["2017-03-31T23:59:59Z", "2017-04-01T00:00:00Z"]
        )
        bins, _ = dm.bin_monthly(ds, 1)
        assert [b.month for b in bins] == ["2017-03", "2017-04"]
        assert all(len(b.rows) == 1 for b in bins)

    def test_chronological_order(self, tmp_path):
        ds = self.build(
            tmp_path,
            ["2017-06-01T00:00:00Z", "2017-02-01T00:00:00Z", "2017-04-01T00:00:00Z"],
        )
        bins, _ = dm.bin_monthly(ds, 1)
        assert [b.month for b in bins] == ["2017-02", "2017-04", "2017-06"]


class TestSplit:
    def test_sizes_small(self):
        assert dm.split_sizes(100) == (81, 9, 10)

    def test_sizes_match_reference_corpus(self):
        train, val, test = dm.split_sizes(709_033)
        for got, want in ((train, 574_308), (val, 63_804), (test, 70_921)):
            assert abs(got - want) / want < 1e-3

    def test_sizes_sum(self):
        for n in (10, 57, 100, 1234):
            assert sum(dm.split_sizes(n)) == n

    def make_dataset(self, tmp_path, n=60, cats=3):
        path = tmp_path / "d.jsonl"
        write_lines(
            path,
            [
                record(i, 1000.0 * (i + 1), category=f"c{i % cats}")
                for i in range(n)
            ],
        )
        return dm.load_jsonl(str(path))

    def test_partition(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        train, val, test = dm.split(ds, Rng(0))
        ids = sorted(train.ids + val.ids + test.ids)
        assert ids == sorted(ds.ids)
        assert len(test) == 6 and len(val) == 5 and len(train) == 49

    def test_deterministic(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        a = dm.split(ds, Rng(7))
        b = dm.split(ds, Rng(7))
        for part_a, part_b in zip(a, b):
            assert part_a.ids == part_b.ids

    def test_stratified_balance(self, tmp_path):
        ds = self.make_dataset(tmp_path, n=300, cats=3)
        _, _, test = dm.split(ds, Rng(1))
        counts = np.bincount(test.category, minlength=3)
        assert counts.tolist() == [10, 10, 10]

    def test_parts_keep_parent_timespan(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        train, val, test = dm.split(ds, Rng(0))
        for part in (train, val, test):
            assert part.timespan.t_s == ds.timespan.t_s
            assert part.timespan.t_f == ds.timespan.t_f


class TestDataset:
    def test_subset_and_lookup(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [record(i, 1000.0 * (i + 1)) for i in range(5)])
        ds = dm.load_jsonl(str(path))
        sub = ds.subset([1, 3])
        assert list(sub.ids) == [ds.ids[1], ds.ids[3]]
        assert sub.row_of(ds.ids[3]) == 1
        inst = sub.instance(0)
        assert inst.id == ds.ids[1]
        np.testing.assert_array_equal(inst.visual, ds.visual[1])

    def test_shared_timespan_is_union(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_lines(p1, [record(0, 1000.0), record(1, 4000.0)])
        write_lines(p2, [record(0, 2000.0), record(1, 9000.0)])
        d1 = dm.load_jsonl(str(p1))
        d2 = dm.load_jsonl(str(p2))
        span = dm.shared_timespan(d1, d2)
        assert span.t_s == 1000.0 and span.t_f == 9000.0
        d1w = d1.with_timespan(span)
        assert d1w.timespan.t_f == 9000.0
        assert d1w.ids == d1.ids
