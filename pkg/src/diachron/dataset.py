"""Dataset container, JSONL loading, text featurization, splits, binning.

Instances are stored columnar (one matrix per modality) so kernels and the
evaluation code get contiguous float64 arrays without copying per instance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import DataError, OutOfSpanError, ParseError
from .numerics import Rng

# Mean month length used to measure time distances in loss space.
MONTH_SECONDS = 365.25 / 12.0 * 86400.0

TEST_FRACTION = 0.10
VAL_FRACTION = 0.10
DEFAULT_VOCAB_SIZE = 1024


@dataclass(frozen=True)
class Timespan:
    """Closed interval of epoch seconds covered by a dataset."""

    t_s: float
    t_f: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_s) and math.isfinite(self.t_f)):
            raise DataError("timespan endpoints must be finite")
        if not self.t_s < self.t_f:
            raise DataError(f"timespan requires t_s < t_f, got [{self.t_s}, {self.t_f}]")

    @property
    def length(self) -> float:
        return self.t_f - self.t_s

    def contains(self, ts: float) -> bool:
        return self.t_s <= ts <= self.t_f


def normalize_ts(ts: float, span: Timespan, clamp: bool = False) -> float:
    """Map an epoch timestamp to [0, 1] within ``span``.

    Out-of-span input raises unless ``clamp`` is set; projection at inference
    time clamps, training data never should.
    """
    if not math.isfinite(ts):
        raise DataError("timestamp must be finite")
    if not span.contains(ts):
        if not clamp:
            raise OutOfSpanError(
                f"timestamp {ts} outside span [{span.t_s}, {span.t_f}]"
            )
        ts = min(max(ts, span.t_s), span.t_f)
    return (ts - span.t_s) / span.length


@dataclass(frozen=True)
class Vocabulary:
    """Frozen TF-IDF vocabulary: ranked tokens plus their idf weights."""

    tokens: tuple[str, ...]
    idf: np.ndarray

    def __post_init__(self) -> None:
        if len(self.tokens) != self.idf.shape[0]:
            raise DataError("vocabulary tokens and idf lengths differ")

    def __len__(self) -> int:
        return len(self.tokens)

    def featurize(self, docs: list[list[str]]) -> np.ndarray:
        """Weight raw term counts by idf; unknown tokens are dropped."""
        index = {tok: j for j, tok in enumerate(self.tokens)}
        out = np.zeros((len(docs), len(self.tokens)), dtype=np.float64)
        for i, doc in enumerate(docs):
            for tok in doc:
                j = index.get(tok)
                if j is not None:
                    out[i, j] += 1.0
        out *= self.idf[None, :]
        return out

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "idf": [float(x) for x in self.idf]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(
            tokens=tuple(str(t) for t in obj["tokens"]),
            idf=np.asarray(obj["idf"], dtype=np.float64),
        )


def build_vocabulary(docs: list[list[str]], vocab_size: int) -> Vocabulary:
    """Top ``vocab_size`` tokens by document frequency, ties broken lexically.

    idf = ln(N / df) with natural log; df counts documents, not occurrences.
    """
    if vocab_size < 1:
        raise DataError("vocab_size must be positive")
    df: dict[str, int] = {}
    for doc in docs:
        for tok in set(doc):
            df[tok] = df.get(tok, 0) + 1
    if not df:
        raise DataError("no tokens in any document; cannot build vocabulary")
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:vocab_size]
    tokens = tuple(tok for tok, _ in ranked)
    n_docs = len(docs)
    idf = np.array([math.log(n_docs / df[tok]) for tok in tokens], dtype=np.float64)
    return Vocabulary(tokens=tokens, idf=idf)


def tfidf_featurize(
    docs: list[list[str]], vocab_size: int = DEFAULT_VOCAB_SIZE
) -> tuple[np.ndarray, Vocabulary]:
    vocab = build_vocabulary(docs, vocab_size)
    return vocab.featurize(docs), vocab


@dataclass(frozen=True)
class Instance:
    """One row of a dataset, materialized on demand."""

    id: str
    visual: np.ndarray
    text: np.ndarray
    ts: float
    category: int


class Dataset:
    """Columnar store of paired image/text instances with timestamps."""

    def __init__(
        self,
        ids: list[str],
        visual: np.ndarray,
        text: np.ndarray,
        ts: np.ndarray,
        category: np.ndarray,
        categories: list[str],
        timespan: Timespan,
        vocabulary: Vocabulary | None = None,
    ) -> None:
        n = len(ids)
        if len(set(ids)) != n:
            raise DataError("duplicate instance ids")
        for name, arr, nd in (
            ("visual", visual, 2),
            ("text", text, 2),
            ("ts", ts, 1),
            ("category", category, 1),
        ):
            if arr.ndim != nd or arr.shape[0] != n:
                raise DataError(f"{name} array shape {arr.shape} does not match {n} ids")
        if not np.all(np.isfinite(visual)) or not np.all(np.isfinite(text)):
            raise DataError("non-finite feature values")
        if category.size and (category.min() < 0 or category.max() >= len(categories)):
            raise DataError("category index out of range")
        for t in ts:
            if not timespan.contains(float(t)):
                raise DataError(f"timestamp {t} outside dataset timespan")
        self.ids = list(ids)
        self.visual = np.ascontiguousarray(visual, dtype=np.float64)
        self.text = np.ascontiguousarray(text, dtype=np.float64)
        self.ts = np.ascontiguousarray(ts, dtype=np.float64)
        self.category = np.ascontiguousarray(category, dtype=np.int64)
        self.categories = list(categories)
        self.timespan = timespan
        self.vocabulary = vocabulary
        self._row_of = {iid: i for i, iid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def d_v(self) -> int:
        return self.visual.shape[1]

    @property
    def d_t(self) -> int:
        return self.text.shape[1]

    def row_of(self, instance_id: str) -> int:
        try:
            return self._row_of[instance_id]
        except KeyError:
            raise DataError(f"unknown instance id {instance_id!r}") from None

    def instance(self, i: int) -> Instance:
        return Instance(
            id=self.ids[i],
            visual=self.visual[i],
            text=self.text[i],
            ts=float(self.ts[i]),
            category=int(self.category[i]),
        )

    def subset(self, rows: np.ndarray | list[int]) -> "Dataset":
        """Row-sliced view copy; keeps the parent timespan and category table."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            ids=[self.ids[i] for i in rows],
            visual=self.visual[rows],
            text=self.text[rows],
            ts=self.ts[rows],
            category=self.category[rows],
            categories=self.categories,
            timespan=self.timespan,
            vocabulary=self.vocabulary,
        )

    def category_name(self, i: int) -> str:
        return self.categories[int(self.category[i])]

    def with_timespan(self, span: Timespan) -> "Dataset":
        """Same rows under a wider declared span (e.g., shared across splits)."""
        return Dataset(
            ids=self.ids,
            visual=self.visual,
            text=self.text,
            ts=self.ts,
            category=self.category,
            categories=self.categories,
            timespan=span,
            vocabulary=self.vocabulary,
        )


def _parse_iso_utc(value: str, where: str) -> float:
    """ISO-8601 string to epoch seconds; naive values are taken as UTC."""
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(f"{where}: bad timestamp {value!r}: {exc}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_ts_field(value, where: str) -> float:
    if isinstance(value, str):
        return _parse_iso_utc(value, where)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        ts = float(value)
        if not math.isfinite(ts):
            raise ParseError(f"{where}: non-finite timestamp")
        return ts
    raise ParseError(f"{where}: timestamp must be an ISO-8601 string or epoch number")


def parse_timestamp(text: str) -> float:
    """Epoch seconds from an ISO-8601 string or a bare number."""
    try:
        ts = float(text)
    except ValueError:
        return _parse_iso_utc(text, "timestamp")
    if not math.isfinite(ts):
        raise ParseError("timestamp must be finite")
    return ts


def shared_timespan(*datasets: Dataset) -> Timespan:
    """The union span, for splits that must agree on time normalization."""
    if not datasets:
        raise DataError("no datasets given")
    return Timespan(
        min(d.timespan.t_s for d in datasets),
        max(d.timespan.t_f for d in datasets),
    )


def _parse_vector(value, where: str, name: str) -> np.ndarray:
    if not isinstance(value, list):
        raise ParseError(f"{where}: {name} must be a list of numbers")
    try:
        vec = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: {name} has non-numeric entries") from None
    if vec.ndim != 1 or vec.size == 0:
        raise ParseError(f"{where}: {name} must be a non-empty flat list")
    if not np.all(np.isfinite(vec)):
        raise ParseError(f"{where}: {name} has non-finite values")
    return vec


def load_jsonl(
    path: str,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    vocabulary: Vocabulary | None = None,
) -> Dataset:
    """Read a dataset from JSON lines.

    Each record needs ``id``, ``ts``, ``category``, ``visual``, and either
    ``text`` (precomputed vector) or ``text_tokens`` (token list, featurized
    with TF-IDF).  The two text forms cannot be mixed in one file.  Pass a
    ``vocabulary`` to featurize with previously fitted idf weights, e.g. for
    a test split.
    """
    ids: list[str] = []
    visuals: list[np.ndarray] = []
    text_vecs: list[np.ndarray] = []
    token_docs: list[list[str]] = []
    ts_vals: list[float] = []
    cat_names: list[str] = []
    text_mode: str | None = None

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: invalid JSON: {exc}") from None
            if not isinstance(rec, dict):
                raise ParseError(f"{where}: record must be a JSON object")
            for key in ("id", "ts", "category", "visual"):
                if key not in rec:
                    raise ParseError(f"{where}: missing field {key!r}")
            has_text = "text" in rec
            has_tokens = "text_tokens" in rec
            if has_text == has_tokens:
                raise ParseError(f"{where}: need exactly one of 'text' or 'text_tokens'")
            mode = "vector" if has_text else "tokens"
            if text_mode is None:
                text_mode = mode
            elif mode != text_mode:
                raise ParseError(f"{where}: mixed 'text' and 'text_tokens' records")

            ids.append(str(rec["id"]))
            ts_vals.append(_parse_ts_field(rec["ts"], where))
            cat_names.append(str(rec["category"]))
            v = _parse_vector(rec["visual"], where, "visual")
            if visuals and v.size != visuals[0].size:
                raise ParseError(
                    f"{where}: visual dim {v.size} != {visuals[0].size}"
                )
            visuals.append(v)
            if mode == "vector":
                t = _parse_vector(rec["text"], where, "text")
                if text_vecs and t.size != text_vecs[0].size:
                    raise ParseError(
                        f"{where}: text dim {t.size} != {text_vecs[0].size}"
                    )
                text_vecs.append(t)
            else:
                toks = rec["text_tokens"]
                if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
                    raise ParseError(f"{where}: text_tokens must be a list of strings")
                token_docs.append([t for t in toks if t])

    if not ids:
        raise DataError(f"{path}: no records")

    visual = np.vstack(visuals)

    vocab = vocabulary
    if text_mode == "vector":
        text = np.vstack(text_vecs)
    else:
        if vocab is None:
            text, vocab = tfidf_featurize(token_docs, vocab_size)
        else:
            text = vocab.featurize(token_docs)

    ts = np.asarray(ts_vals, dtype=np.float64)
    t_s, t_f = float(ts.min()), float(ts.max())
    if t_s == t_f:
        raise DataError(f"{path}: all timestamps identical; timespan would be empty")

    categories = sorted(set(cat_names))
    cat_index = {c: i for i, c in enumerate(categories)}
    category = np.asarray([cat_index[c] for c in cat_names], dtype=np.int64)

    return Dataset(
        ids=ids,
        visual=visual,
        text=text,
        ts=ts,
        category=category,
        categories=categories,
        timespan=Timespan(t_s, t_f),
        vocabulary=vocab,
    )


def write_jsonl(ds: Dataset, path: str) -> None:
    """Inverse of ``load_jsonl`` for vector-text datasets."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(ds)):
            rec = {
                "id": ds.ids[i],
                "ts": datetime.fromtimestamp(float(ds.ts[i]), tz=timezone.utc).isoformat(),
                "category": ds.category_name(i),
                "visual": [float(x) for x in ds.visual[i]],
                "text": [float(x) for x in ds.text[i]],
            }
            fh.write(json.dumps(rec) + "\n")


# --- calendar months -------------------------------------------------------
#
# Binning and time-period inference count whole UTC calendar months, not
# mean-month multiples, so a bin boundary always falls on the first of a
# month.

def month_number(ts: float) -> int:
    """Whole months since 1970-01 of the UTC calendar month containing ts."""
    dt = datetime.fromtimestamp(float(ts), tz=timezone.utc)
    return (dt.year - 1970) * 12 + (dt.month - 1)


def month_start_epoch(number: int) -> float:
    year, month = divmod(number, 12)
    return datetime(1970 + year, month + 1, 1, tzinfo=timezone.utc).timestamp()


def month_label(number: int) -> str:
    year, month = divmod(number, 12)
    return f"{1970 + year:04d}-{month + 1:02d}"


@dataclass(frozen=True)
class Bin:
    """One monthly slice kept by ``bin_monthly``."""

    index: int
    month: str
    month_start: float
    rows: np.ndarray = field(repr=False)


def bin_monthly(ds: Dataset, min_bin_size: int) -> tuple[list[Bin], list[str]]:
    """Slice a dataset into calendar-month bins, dropping sparse months.

    Returns the kept bins in chronological order plus the ids of instances
    whose month fell under ``min_bin_size``.  Bin indices are positions in
    the kept sequence, so neighboring kept bins are adjacent for alignment
    even when a sparse month sat between them.
    """
    if min_bin_size < 1:
        raise DataError("min_bin_size must be positive")
    numbers = np.asarray([month_number(t) for t in ds.ts], dtype=np.int64)
    kept: list[Bin] = []
    excluded: list[str] = []
    for num in np.unique(numbers):
        rows = np.nonzero(numbers == num)[0]
        if rows.size >= min_bin_size:
            kept.append(
                Bin(
                    index=len(kept),
                    month=month_label(int(num)),
                    month_start=month_start_epoch(int(num)),
                    rows=rows,
                )
            )
        else:
            excluded.extend(ds.ids[i] for i in rows)
    return kept, excluded


# --- splits ----------------------------------------------------------------

def _apportion(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` draws across classes."""
    counts = np.asarray(counts, dtype=np.int64)
    if total > counts.sum():
        raise DataError("cannot allocate more draws than instances")
    quotas = counts * (total / counts.sum())
    alloc = np.minimum(np.floor(quotas).astype(np.int64), counts)
    order = np.argsort(-(quotas - alloc), kind="stable")
    short = total - int(alloc.sum())
    for i in order:
        if short == 0:
            break
        if alloc[i] < counts[i]:
            alloc[i] += 1
            short -= 1
    # a class may have been capped at its size; hand leftovers to any room
    for i in np.argsort(-(counts - alloc), kind="stable"):
        if short == 0:
            break
        room = int(counts[i] - alloc[i])
        take = min(room, short)
        alloc[i] += take
        short -= take
    return alloc


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes: 10% test, then 10% of the rest validation."""
    n_test = int(n * TEST_FRACTION)
    rest = n - n_test
    n_val = int(rest * VAL_FRACTION)
    return rest - n_val, n_val, n_test


def split(
    ds: Dataset, rng: Rng, stratified: bool = True
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into train/val/test; stratified keeps category proportions.

    Sampling is by the provided stream only, so one seed reproduces one
    partition byte for byte.
    """
    n = len(ds)
    n_train, n_val, n_test = split_sizes(n)
    if n_test == 0 or n_val == 0:
        raise DataError(f"dataset of {n} instances is too small to split")

    if not stratified:
        perm = rng.shuffled(np.arange(n, dtype=np.int64))
        test_rows = np.sort(perm[:n_test])
        val_rows = np.sort(perm[n_test : n_test + n_val])
        train_rows = np.sort(perm[n_test + n_val :])
    else:
        n_cat = len(ds.categories)
        by_cat = [np.nonzero(ds.category == c)[0] for c in range(n_cat)]
        counts = np.asarray([rows.size for rows in by_cat], dtype=np.int64)
        test_alloc = _apportion(counts, n_test)
        test_parts, rest_parts = [], []
        for c in range(n_cat):
            rows = rng.shuffled(by_cat[c])
            test_parts.append(rows[: test_alloc[c]])
            rest_parts.append(rows[test_alloc[c] :])
        rest_counts = np.asarray([r.size for r in rest_parts], dtype=np.int64)
        val_alloc = _apportion(rest_counts, n_val)
        val_parts = [rest_parts[c][: val_alloc[c]] for c in range(n_cat)]
        train_parts = [rest_parts[c][val_alloc[c] :] for c in range(n_cat)]
        test_rows = np.sort(np.concatenate(test_parts))
        val_rows = np.sort(np.concatenate(val_parts))
        train_rows = np.sort(np.concatenate(train_parts))

    return ds.subset(train_rows), ds.subset(val_rows), ds.subset(test_rows)
