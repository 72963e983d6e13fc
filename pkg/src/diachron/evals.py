"""Retrieval evaluation: alignment mAP, time-period inference, dispersion.

All protocols rank unit embeddings by dot product with ties broken by
ascending instance id, which makes every reported number a pure function of
(model, dataset, protocol parameters).  A projector object hides which model
flavor produced the embeddings: the continuous model projects at an
instance's own (or any probe) timestamp, the static one pins the time input
to 0, and the binned baseline projects with the nearest month's model and
rotates into the final month's frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .dataset import (
    Bin,
    Dataset,
    Timespan,
    bin_monthly,
    month_number,
    month_start_epoch,
    normalize_ts,
)
from .errors import DataError
from .model import Checkpoint, ModelParams
from .numerics import Rng
from .trainer import BinnedModel

I2T = "I2T"
T2I = "T2I"


# --- projectors --------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousProjector:
    """Wraps continuous and static checkpoints (static: time pinned to 0)."""

    params: ModelParams
    span: Timespan
    freeze_time: bool = False

    def _u(self, ts: np.ndarray) -> np.ndarray:
        if self.freeze_time:
            return np.zeros(len(ts), dtype=np.float64)
        return np.asarray(
            [normalize_ts(float(t), self.span, clamp=True) for t in ts],
            dtype=np.float64,
        )

    def embed_pairs(
        self, ds: Dataset, rows: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Both modalities of the given rows, each at its own timestamp."""
        if rows is None:
            rows = np.arange(len(ds))
        return model_mod.project_batch(
            self.params, ds.visual[rows], ds.text[rows], self._u(ds.ts[rows])
        )

    def embed_pairs_at(
        self, ds: Dataset, rows: np.ndarray, ts: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Both modalities of the given rows, all at one probe instant."""
        u = self._u(np.full(len(rows), ts, dtype=np.float64))
        return model_mod.project_batch(
            self.params, ds.visual[rows], ds.text[rows], u
        )

    def embed_one(self, x: np.ndarray, modality: str, ts: float) -> np.ndarray:
        u = 0.0 if self.freeze_time else normalize_ts(ts, self.span, clamp=True)
        return model_mod.project(self.params, x, modality, u).vector


@dataclass(frozen=True)
class BinnedProjector:
    bm: BinnedModel

    def _bin_of_rows(self, ds: Dataset, rows: np.ndarray) -> np.ndarray:
        cache: dict[int, int] = {}
        out = np.empty(len(rows), dtype=np.int64)
        for i, r in enumerate(rows):
            num = month_number(float(ds.ts[r]))
            if num not in cache:
                cache[num] = self.bm.bin_for_ts(float(ds.ts[r]))
            out[i] = cache[num]
        return out

    def embed_pairs(
        self, ds: Dataset, rows: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        if rows is None:
            rows = np.arange(len(ds))
        rows = np.asarray(rows, dtype=np.int64)
        which = self._bin_of_rows(ds, rows)
        d = self.bm.config.embed_dim
        ev = np.empty((len(rows), d), dtype=np.float64)
        et = np.empty((len(rows), d), dtype=np.float64)
        for b in np.unique(which):
            sel = np.nonzero(which == b)[0]
            sub = rows[sel]
            ev_b, et_b = self.bm.embed(ds.visual[sub], ds.text[sub], int(b))
            ev[sel] = ev_b
            et[sel] = et_b
        return ev, et

    def embed_pairs_at(
        self, ds: Dataset, rows: np.ndarray, ts: float
    ) -> tuple[np.ndarray, np.ndarray]:
        b = self.bm.bin_for_ts(ts)
        return self.bm.embed(ds.visual[rows], ds.text[rows], b)

    def embed_one(self, x: np.ndarray, modality: str, ts: float) -> np.ndarray:
        b = self.bm.bin_for_ts(ts)
        vec = model_mod.project(self.bm.models[b], x, modality, 0.0).vector
        return vec @ self.bm.rotations[b]


Projector = ContinuousProjector | BinnedProjector


def projector_from_checkpoint(ckpt: Checkpoint) -> ContinuousProjector:
    return ContinuousProjector(
        params=ckpt.params,
        span=ckpt.timespan,
        freeze_time=ckpt.kind == model_mod.KIND_STATIC,
    )


# --- rankings and AP ---------------------------------------------------------

def rank_candidates(
    sims: np.ndarray, cand_ids: np.ndarray
) -> np.ndarray:
    """Candidate order: similarity descending, id ascending on ties."""
    return np.lexsort((cand_ids, -sims))


def average_precision(relevance) -> float:
    """Mean of precision at each relevant rank; 0 when nothing is relevant."""
    rel = np.asarray(relevance)
    if rel.size == 0:
        raise DataError("average_precision needs a non-empty list")
    hits = 0
    total = 0.0
    for i, r in enumerate(rel, start=1):
        if r:
            hits += 1
            total += hits / i
    return total / hits if hits else 0.0


def ap_at_k(relevance, k: int) -> float:
    return average_precision(np.asarray(relevance)[:k])


# --- reports -----------------------------------------------------------------

@dataclass
class DirectionResult:
    direction: str
    # (query id, month label or "", value)
    per_query: list[tuple[str, str, float]] = field(default_factory=list)

    @property
    def aggregate(self) -> float:
        if not self.per_query:
            return 0.0
        return float(np.mean([v for _, _, v in self.per_query]))


@dataclass
class EvalReport:
    metric: str
    directions: list[DirectionResult]
    config: dict
    notes: list[str] = field(default_factory=list)

    def direction(self, name: str) -> DirectionResult:
        for d in self.directions:
            if d.direction == name:
                return d
        raise DataError(f"no direction {name!r} in report")

    @property
    def average(self) -> float:
        if not self.directions:
            return 0.0
        return float(np.mean([d.aggregate for d in self.directions]))

    def summary(self) -> dict:
        out = {
            "metric": self.metric,
            "average": self.average,
            "config": self.config,
            "notes": list(self.notes),
        }
        for d in self.directions:
            out[d.direction] = d.aggregate
        return out


def write_meta_lines(fh, meta: list[tuple[str, str]] | None) -> None:
    for key, value in meta or []:
        fh.write(f"# {key}={value}\n")


def write_report_csv(
    report: EvalReport, path: str, meta: list[tuple[str, str]] | None = None
) -> None:
    """One row per (direction, query); comment header carries run identity."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_meta_lines(fh, meta)
        writer = csv.writer(fh)
        writer.writerow(["metric", "direction", "query_id", "month", "value"])
        for d in report.directions:
            for qid, month, value in d.per_query:
                writer.writerow([report.metric, d.direction, qid, month, repr(value)])
        for d in report.directions:
            writer.writerow([report.metric, d.direction, "__aggregate__", "", repr(d.aggregate)])
        writer.writerow([report.metric, "avg", "__aggregate__", "", repr(report.average)])


def write_series_csv(
    header: list[str],
    rows: list[list],
    path: str,
    meta: list[tuple[str, str]] | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_meta_lines(fh, meta)
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(x) if isinstance(x, float) else x for x in row]
            )


# --- protocols ---------------------------------------------------------------

def eval_bins(ds: Dataset) -> list[Bin]:
    """Monthly slices of an evaluation set; no month is dropped."""
    bins, _ = bin_monthly(ds, 1)
    return bins


def _id_array(ds: Dataset, rows: np.ndarray) -> np.ndarray:
    return np.asarray([ds.ids[i] for i in rows], dtype="U")


def _direction_map(
    q_emb: np.ndarray,
    c_emb: np.ndarray,
    q_rows: np.ndarray,
    c_rows: np.ndarray,
    relevant: "callable",
    ds: Dataset,
    month: str,
    k: int | None,
    result: DirectionResult,
) -> None:
    """Append per-query AP values for one direction to ``result``."""
    cand_ids = _id_array(ds, c_rows)
    sims = q_emb @ c_emb.T
    for qi in range(len(q_rows)):
        order = rank_candidates(sims[qi], cand_ids)
        rel = relevant(int(q_rows[qi]), c_rows[order])
        value = average_precision(rel) if k is None else ap_at_k(rel, k)
        result.per_query.append((ds.ids[int(q_rows[qi])], month, value))


def coarse_alignment(projector: Projector, test: Dataset) -> EvalReport:
    """Full cross-modal mAP at each instance's own timestamp.

    Every test instance queries in both directions against every
    opposite-modality embedding; a neighbor is relevant when it shares the
    query's category.
    """
    if len(test) == 0:
        raise DataError("empty test set")
    rows = np.arange(len(test))
    ev, et = projector.embed_pairs(test, rows)
    cat = test.category

    def same_cat(q: int, c_rows: np.ndarray) -> np.ndarray:
        return cat[c_rows] == cat[q]

    i2t = DirectionResult(I2T)
    t2i = DirectionResult(T2I)
    _direction_map(ev, et, rows, rows, same_cat, test, "", None, i2t)
    _direction_map(et, ev, rows, rows, same_cat, test, "", None, t2i)
    return EvalReport(
        metric="coarse_alignment",
        directions=[i2t, t2i],
        config={"n_queries": len(test)},
    )


def local_alignment(
    projector: Projector,
    test: Dataset,
    queries_per_cat: int = 50,
    k: int = 10,
    seed: int = 0,
) -> EvalReport:
    """Re-project sampled queries at every month and score that month's pool.

    Each query is embedded at the month midpoint and ranked against only the
    embeddings of instances whose timestamp falls in that month, top-k.
    """
    bins = eval_bins(test)
    rng = Rng(seed)
    cat = test.category
    q_rows_list: list[np.ndarray] = []
    for c in range(len(test.categories)):
        rows_c = np.nonzero(cat == c)[0]
        if rows_c.size == 0:
            continue
        take = min(queries_per_cat, rows_c.size)
        picks = rng.split("queries", c).sample_indices(rows_c.size, take)
        q_rows_list.append(rows_c[np.sort(picks)])
    q_rows = np.concatenate(q_rows_list) if q_rows_list else np.empty(0, np.int64)
    if q_rows.size == 0:
        raise DataError("no queries could be sampled")

    i2t = DirectionResult(I2T)
    t2i = DirectionResult(T2I)
    notes: list[str] = []
    for b in bins:
        if len(b.rows) < k:
            notes.append(f"{b.month}: only {len(b.rows)} candidates for top-{k}")
        mid = b.month_start + 0.5 * (
            _next_month_start(b.month_start) - b.month_start
        )
        qv, qt = projector.embed_pairs_at(test, q_rows, mid)
        cv, ct = projector.embed_pairs(test, b.rows)

        def same_cat(q: int, c_rows: np.ndarray) -> np.ndarray:
            return cat[c_rows] == cat[q]

        _direction_map(qv, ct, q_rows, b.rows, same_cat, test, b.month, k, i2t)
        _direction_map(qt, cv, q_rows, b.rows, same_cat, test, b.month, k, t2i)
    return EvalReport(
        metric="local_alignment",
        directions=[i2t, t2i],
        config={
            "queries_per_cat": queries_per_cat,
            "k": k,
            "seed": seed,
            "n_bins": len(bins),
        },
        notes=notes,
    )


def _next_month_start(month_start: float) -> float:
    return month_start_epoch(month_number(month_start) + 1)


def bounded_semantics(
    projector: Projector, test: Dataset
) -> tuple[EvalReport, list[list]]:
    """Coarse protocol run inside each month separately.

    Returns the pooled report plus a per-month series [month, i2t, t2i, avg,
    n_queries] for plotting.
    """
    bins = eval_bins(test)
    cat = test.category
    i2t = DirectionResult(I2T)
    t2i = DirectionResult(T2I)
    series: list[list] = []
    for b in bins:
        ev, et = projector.embed_pairs(test, b.rows)

        def same_cat(q: int, c_rows: np.ndarray) -> np.ndarray:
            return cat[c_rows] == cat[q]

        mark = len(i2t.per_query)
        _direction_map(ev, et, b.rows, b.rows, same_cat, test, b.month, None, i2t)
        _direction_map(et, ev, b.rows, b.rows, same_cat, test, b.month, None, t2i)
        bin_i2t = float(np.mean([v for _, _, v in i2t.per_query[mark:]]))
        bin_t2i = float(np.mean([v for _, _, v in t2i.per_query[mark:]]))
        series.append(
            [b.month, bin_i2t, bin_t2i, (bin_i2t + bin_t2i) / 2.0, len(b.rows)]
        )
    return (
        EvalReport(
            metric="bounded_semantics",
            directions=[i2t, t2i],
            config={"n_bins": len(bins)},
        ),
        series,
    )


def time_period_inference(
    projector: Projector, test: Dataset, k: int = 50, window_months: int = 4
) -> EvalReport:
    """mAP@k where relevance needs the category AND a nearby calendar month."""
    if len(test) == 0:
        raise DataError("empty test set")
    rows = np.arange(len(test))
    ev, et = projector.embed_pairs(test, rows)
    cat = test.category
    months = np.asarray([month_number(t) for t in test.ts], dtype=np.int64)

    def relevant(q: int, c_rows: np.ndarray) -> np.ndarray:
        return (cat[c_rows] == cat[q]) & (
            np.abs(months[c_rows] - months[q]) <= window_months
        )

    i2t = DirectionResult(I2T)
    t2i = DirectionResult(T2I)
    _direction_map(ev, et, rows, rows, relevant, test, "", k, i2t)
    _direction_map(et, ev, rows, rows, relevant, test, "", k, t2i)
    return EvalReport(
        metric="time_period_inference",
        directions=[i2t, t2i],
        config={"k": k, "window_months": window_months},
    )


def dispersion(
    projector: Projector,
    test: Dataset,
    query_id: str,
    modality: str = "visual",
    k: int = 5,
) -> list[list]:
    """Neighborhood tightness of one query embedding across months.

    The query is embedded once at its own timestamp; for each month the
    value is the mean similarity to its k nearest embeddings among that
    month's instances, both modalities pooled, the query's own element
    excluded.  Months with no candidates yield an empty value.
    """
    q_row = test.row_of(query_id)
    if modality not in ("visual", "text"):
        raise DataError(f"unknown modality {modality!r}")
    x = test.visual[q_row] if modality == "visual" else test.text[q_row]
    q_emb = projector.embed_one(x, modality, float(test.ts[q_row]))

    series: list[list] = []
    for b in eval_bins(test):
        ev, et = projector.embed_pairs(test, b.rows)
        sims: list[float] = []
        for side, emb in (("visual", ev), ("text", et)):
            for local_i, row in enumerate(b.rows):
                if int(row) == q_row and side == modality:
                    continue
                sims.append(float(q_emb @ emb[local_i]))
        if not sims:
            series.append([b.month, "", 0])
            continue
        top = sorted(sims, reverse=True)[:k]
        series.append([b.month, float(np.mean(top)), len(sims)])
    return series


def evolution_timeline(
    projector: Projector,
    test: Dataset,
    query_id: str,
    modality: str = "text",
    top_bins: int = 20,
    per_bin: int = 4,
) -> list[dict]:
    """Months ranked by their single closest opposite-modality match.

    Returns at most ``top_bins`` entries, each with the month, its best
    similarity, and the ``per_bin`` closest opposite-modality instances.
    """
    q_row = test.row_of(query_id)
    x = test.visual[q_row] if modality == "visual" else test.text[q_row]
    q_emb = projector.embed_one(x, modality, float(test.ts[q_row]))

    scored: list[tuple[float, str, list[tuple[str, float]]]] = []
    for b in eval_bins(test):
        ev, et = projector.embed_pairs(test, b.rows)
        cand = et if modality == "visual" else ev
        sims = cand @ q_emb
        cand_ids = _id_array(test, b.rows)
        order = rank_candidates(sims, cand_ids)
        matches = [
            (str(cand_ids[i]), float(sims[i])) for i in order[:per_bin]
        ]
        scored.append((float(sims[order[0]]), b.month, matches))
    scored.sort(key=lambda row: (-row[0], row[1]))
    return [
        {"month": month, "best_similarity": best, "matches": matches}
        for best, month, matches in scored[:top_bins]
    ]
