"""Synthetic timestamped multimodal data with planted temporal structure.

Each category is a Gaussian cluster in visual space paired with a Gaussian
cluster in text space.  Temporal patterns shape when instances occur (spike,
recurrent, uniform); an optional changepoint swaps a category's text centroid
while its visual centroid stays put, so matching post-changepoint pairs is
impossible without conditioning on time.  Everything is a pure function of
the config, including the RNG streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, Timespan, month_number, month_start_epoch
from .errors import DataError
from .numerics import Rng


@dataclass(frozen=True)
class Spike:
    center_month: float
    width_months: float

    def to_json(self) -> dict:
        return {"kind": "spike", "center": self.center_month, "width": self.width_months}


@dataclass(frozen=True)
class Recurrent:
    period_months: int

    def to_json(self) -> dict:
        return {"kind": "recurrent", "period": self.period_months}


@dataclass(frozen=True)
class UniformPattern:
    def to_json(self) -> dict:
        return {"kind": "uniform"}


Pattern = Spike | Recurrent | UniformPattern


def pattern_from_json(obj: dict) -> Pattern:
    kind = obj.get("kind")
    try:
        if kind == "uniform":
            return UniformPattern()
        if kind == "spike":
            return Spike(center_month=float(obj["center"]), width_months=float(obj["width"]))
        if kind == "recurrent":
            return Recurrent(period_months=int(obj["period"]))
    except (KeyError, TypeError, ValueError):
        pass
    raise DataError(f"bad pattern object {obj!r}")


def parse_pattern(text: str) -> Pattern:
    """Parse 'uniform', 'spike:CENTER:WIDTH', or 'recurrent:PERIOD'."""
    parts = text.split(":")
    kind = parts[0].strip().lower()
    try:
        if kind == "uniform" and len(parts) == 1:
            return UniformPattern()
        if kind == "spike" and len(parts) == 3:
            return Spike(center_month=float(parts[1]), width_months=float(parts[2]))
        if kind == "recurrent" and len(parts) == 2:
            return Recurrent(period_months=int(parts[1]))
    except ValueError:
        pass
    raise DataError(f"bad pattern spec {text!r}")


@dataclass(frozen=True)
class SynthConfig:
    n_categories: int = 4
    instances_per_category: int = 500
    d_v: int = 64
    d_t: int = 48
    months: int = 24
    patterns: tuple[Pattern, ...] | None = None
    shift_spec: tuple[tuple[int, int], ...] = ()
    cluster_separation: float = 4.0
    noise_sigma: float = 1.0
    start_month: str = "2010-01"
    seed: int = 0

    def resolved_patterns(self) -> tuple[Pattern, ...]:
        if self.patterns is None:
            return tuple(UniformPattern() for _ in range(self.n_categories))
        return self.patterns

    def validate(self) -> None:
        if self.n_categories < 1 or self.instances_per_category < 1:
            raise DataError("need at least one category and one instance per category")
        if self.d_v < 1 or self.d_t < 1 or self.months < 1:
            raise DataError("d_v, d_t, months must be positive")
        if self.patterns is not None and len(self.patterns) != self.n_categories:
            raise DataError(
                f"{len(self.patterns)} patterns for {self.n_categories} categories"
            )
        for cat, month in self.shift_spec:
            if not 0 <= cat < self.n_categories:
                raise DataError(f"shift category {cat} out of range")
            if not 0 < month < self.months:
                raise DataError(f"changepoint month {month} not inside (0, {self.months})")
        if not self.cluster_separation > 0:
            raise DataError("cluster_separation must be > 0")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        self.start_number()

    def start_number(self) -> int:
        try:
            year_s, month_s = self.start_month.split("-")
            year, month = int(year_s), int(month_s)
            if not 1 <= month <= 12:
                raise ValueError
        except ValueError:
            raise DataError(f"bad start_month {self.start_month!r}, want YYYY-MM") from None
        return (year - 1970) * 12 + (month - 1)

    def to_json(self) -> dict:
        return {
            "n_categories": self.n_categories,
            "instances_per_category": self.instances_per_category,
            "d_v": self.d_v,
            "d_t": self.d_t,
            "months": self.months,
            "patterns": [p.to_json() for p in self.resolved_patterns()],
            "shift_spec": [list(pair) for pair in self.shift_spec],
            "cluster_separation": self.cluster_separation,
            "noise_sigma": self.noise_sigma,
            "start_month": self.start_month,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        base = cls()
        try:
            patterns = obj.get("patterns")
            cfg = cls(
                n_categories=int(obj.get("n_categories", base.n_categories)),
                instances_per_category=int(
                    obj.get("instances_per_category", base.instances_per_category)
                ),
                d_v=int(obj.get("d_v", base.d_v)),
                d_t=int(obj.get("d_t", base.d_t)),
                months=int(obj.get("months", base.months)),
                patterns=(
                    None
                    if patterns is None
                    else tuple(pattern_from_json(p) for p in patterns)
                ),
                shift_spec=tuple(
                    (int(c), int(m)) for c, m in obj.get("shift_spec", ())
                ),
                cluster_separation=float(
                    obj.get("cluster_separation", base.cluster_separation)
                ),
                noise_sigma=float(obj.get("noise_sigma", base.noise_sigma)),
                start_month=str(obj.get("start_month", base.start_month)),
                seed=int(obj.get("seed", base.seed)),
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad synth config: {exc}") from None
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class GroundTruth:
    """Generative parameters behind a synthetic dataset, for oracle checks."""

    config: SynthConfig
    visual_centroids: np.ndarray = field(repr=False)
    text_centroids: np.ndarray = field(repr=False)
    shifted_text_centroids: dict[int, np.ndarray] = field(repr=False)

    def changepoint(self, category: int) -> int | None:
        for cat, month in self.config.shift_spec:
            if cat == category:
                return month
        return None

    def text_centroid_at(self, category: int, month: float) -> np.ndarray:
        cp = self.changepoint(category)
        if cp is not None and month >= cp:
            return self.shifted_text_centroids[category]
        return self.text_centroids[category]

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "visual_centroids": self.visual_centroids.tolist(),
            "text_centroids": self.text_centroids.tolist(),
            "shifted_text_centroids": {
                str(cat): vec.tolist() for cat, vec in self.shifted_text_centroids.items()
            },
        }


def _centroid(rng: Rng, dim: int, separation: float) -> np.ndarray:
    vec = rng.normal_array((dim,))
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec[0] = 1.0
        norm = 1.0
    return vec * (separation / norm)


def ground_truth(cfg: SynthConfig) -> GroundTruth:
    """Centroids implied by the config; generate() draws around exactly these."""
    cfg.validate()
    base = Rng(cfg.seed)
    visual = np.vstack(
        [
            _centroid(base.split("centroid", "visual", c), cfg.d_v, cfg.cluster_separation)
            for c in range(cfg.n_categories)
        ]
    )
    text = np.vstack(
        [
            _centroid(base.split("centroid", "text", c), cfg.d_t, cfg.cluster_separation)
            for c in range(cfg.n_categories)
        ]
    )
    shifted = {
        cat: _centroid(
            base.split("centroid", "text-shifted", cat), cfg.d_t, cfg.cluster_separation
        )
        for cat, _ in cfg.shift_spec
    }
    return GroundTruth(
        config=cfg,
        visual_centroids=visual,
        text_centroids=text,
        shifted_text_centroids=shifted,
    )


def _draw_months(pattern: Pattern, n: int, months: int, rng: Rng) -> np.ndarray:
    """Real-valued month offsets in [0, months) following the pattern."""
    lo, hi = 0.0, float(months) - 1e-9
    if isinstance(pattern, UniformPattern):
        return rng.uniform_array(lo, float(months), (n,))
    if isinstance(pattern, Spike):
        m = pattern.center_month + pattern.width_months * rng.normal_array((n,))
        return np.clip(m, lo, hi)
    if isinstance(pattern, Recurrent):
        bumps = np.arange(0, months, pattern.period_months, dtype=np.float64)
        picks = rng.integer_array(len(bumps), (n,))
        return np.minimum(bumps[picks] + rng.uniform_array(0.0, 1.0, (n,)), hi)
    raise DataError(f"unknown pattern {pattern!r}")


def _month_to_epoch(start_number: int, m: float) -> float:
    whole = int(math.floor(m))
    frac = m - whole
    start = month_start_epoch(start_number + whole)
    end = month_start_epoch(start_number + whole + 1)
    return start + frac * (end - start)


def generate(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    """Draw the dataset the config describes.

    Timestamps land in calendar months counted from ``start_month``; the
    dataset timespan covers the whole declared range, not just the sampled
    extremes, so it is itself a function of the config alone.
    """
    truth = ground_truth(cfg)
    base = Rng(cfg.seed)
    start = cfg.start_number()
    patterns = cfg.resolved_patterns()

    ids: list[str] = []
    cats: list[int] = []
    month_offsets: list[np.ndarray] = []
    visual_rows: list[np.ndarray] = []
    text_rows: list[np.ndarray] = []

    for c in range(cfg.n_categories):
        n = cfg.instances_per_category
        m = _draw_months(patterns[c], n, cfg.months, base.split("months", c))
        order = np.argsort(m, kind="stable")
        m = m[order]
        noise_v = base.split("noise", "visual", c).normal_array((n, cfg.d_v))
        noise_t = base.split("noise", "text", c).normal_array((n, cfg.d_t))
        visual = truth.visual_centroids[c][None, :] + cfg.noise_sigma * noise_v
        cp = truth.changepoint(c)
        text = np.empty((n, cfg.d_t), dtype=np.float64)
        for i in range(n):
            base_text = truth.text_centroid_at(c, float(m[i]))
            text[i] = base_text + cfg.noise_sigma * noise_t[i]
        ids.extend(f"syn-{c:02d}-{i:05d}" for i in range(n))
        cats.extend([c] * n)
        month_offsets.append(m)
        visual_rows.append(visual)
        text_rows.append(text)

    months_all = np.concatenate(month_offsets)
    ts = np.asarray(
        [_month_to_epoch(start, float(m)) for m in months_all], dtype=np.float64
    )
    span = Timespan(month_start_epoch(start), month_start_epoch(start + cfg.months))
    ds = Dataset(
        ids=ids,
        visual=np.vstack(visual_rows),
        text=np.vstack(text_rows),
        ts=ts,
        category=np.asarray(cats, dtype=np.int64),
        categories=[f"cat{c:02d}" for c in range(cfg.n_categories)],
        timespan=span,
        vocabulary=None,
    )
    return ds, truth


def shifted_config(seed: int = 0) -> SynthConfig:
    """Four categories over two years: a spike, a recurrent event, two flat
    ones, and one text changepoint halfway through."""
    return SynthConfig(
        n_categories=4,
        instances_per_category=500,
        months=24,
        patterns=(
            Spike(center_month=6.0, width_months=2.0),
            Recurrent(period_months=8),
            UniformPattern(),
            UniformPattern(),
        ),
        shift_spec=((3, 12),),
        seed=seed,
    )


def stationary_config(seed: int = 0) -> SynthConfig:
    """Same shape, no planted temporal structure at all."""
    return SynthConfig(
        n_categories=4,
        instances_per_category=500,
        months=24,
        patterns=None,
        shift_spec=(),
        seed=seed,
    )


def era_of(truth: GroundTruth, category: int, ts: float) -> int:
    """0 before the category's changepoint, 1 after; 0 if it never shifts."""
    cp = truth.changepoint(category)
    if cp is None:
        return 0
    start = truth.config.start_number()
    return int(month_number(ts) - start >= cp)
