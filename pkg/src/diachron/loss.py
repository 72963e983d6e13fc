"""Triplet construction and the temporally constrained ranking loss.

Two triplet kinds share one hinge.  Category-separation triplets pull an
instance's two modalities together and push a different-category instance
away at full weight.  Same-category triplets do nothing inside a time window
of w months and otherwise push the temporally distant instance away with a
weight that saturates toward 1 as the gap grows: rho = 1 - exp(-|dt| x
decay).  Both anchor directions (image to text, text to image) are sampled,
and batch losses are sums, not means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import MONTH_SECONDS, Instance, Timespan, normalize_ts
from .errors import DataError
from .model import ModelParams
from .numerics import Rng

INTER = "inter"
INTRA = "intra"


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    window_months: float = 4.0
    decay: float = 0.1
    intra_margin: float | None = None
    k_neg: int = 1
    k_pos: int = 1

    def validate(self) -> None:
        if not self.margin > 0:
            raise DataError("margin must be > 0")
        if self.window_months < 0:
            raise DataError("window must be >= 0 months")
        if not self.decay > 0:
            raise DataError("decay must be > 0")
        if self.intra_margin is not None and not self.intra_margin > 0:
            raise DataError("intra_margin must be > 0")
        if self.k_neg < 0 or self.k_pos < 0:
            raise DataError("k_neg and k_pos must be >= 0")

    @property
    def effective_intra_margin(self) -> float:
        return self.margin if self.intra_margin is None else self.intra_margin

    def to_json(self) -> dict:
        return {
            "margin": self.margin,
            "window_months": self.window_months,
            "decay": self.decay,
            "intra_margin": self.intra_margin,
            "k_neg": self.k_neg,
            "k_pos": self.k_pos,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LossConfig":
        cfg = cls(
            margin=float(obj.get("margin", 1.0)),
            window_months=float(obj.get("window_months", 4.0)),
            decay=float(obj.get("decay", 0.1)),
            intra_margin=(
                None if obj.get("intra_margin") is None else float(obj["intra_margin"])
            ),
            k_neg=int(obj.get("k_neg", 1)),
            k_pos=int(obj.get("k_pos", 1)),
        )
        cfg.validate()
        return cfg


Side = tuple[str, str]  # (instance id, modality)


@dataclass(frozen=True)
class Triplet:
    """Anchor plus partners, all referenced by (id, modality).

    For ``inter`` the positive is the anchor's own counterpart and the
    negative is a different-category instance.  For ``intra`` the positive
    slot holds the same-category temporally distant instance and there is no
    separate negative: inside the hinge the counterpart is the target and the
    distant instance is what gets pushed away.
    """

    anchor: Side
    positive: Side
    negative: Side | None
    kind: str


@dataclass(frozen=True)
class LossValue:
    total: float
    inter_part: float
    intra_part: float
    active_triplet_count: int


def hinge(margin: float, s_ap: float, s_an: float) -> float:
    return max(0.0, margin - s_ap + s_an)


def rho(t_a_months: float, t_b_months: float, decay: float) -> float:
    """Temporal decay weight in [0, 1), symmetric, zero at equal times."""
    if not decay > 0:
        raise DataError("decay must be > 0")
    return 1.0 - math.exp(-abs(t_a_months - t_b_months) * decay)


def intra_weight(t_a_months: float, t_b_months: float, cfg: LossConfig) -> float:
    """0 inside the window, rho outside; the whole time dependence of L_intra."""
    if abs(t_a_months - t_b_months) <= cfg.window_months:
        return 0.0
    return rho(t_a_months, t_b_months, cfg.decay)


def intra_loss(
    s_counterpart: float,
    s_distant: float,
    t_a_months: float,
    t_p_months: float,
    cfg: LossConfig,
) -> float:
    """Same-category term for one anchor: decayed hinge, or 0 in-window."""
    w = intra_weight(t_a_months, t_p_months, cfg)
    if w == 0.0:
        return 0.0
    return w * hinge(cfg.effective_intra_margin, s_counterpart, s_distant)


def inter_loss(s_counterpart: float, s_negative: float, cfg: LossConfig) -> float:
    """Category-separation term for one anchor."""
    return hinge(cfg.margin, s_counterpart, s_negative)


def _opposite(modality: str) -> str:
    return "text" if modality == "visual" else "visual"


def sample_batch_triplets(
    batch: list[Instance], rng: Rng, cfg: LossConfig
) -> list[Triplet]:
    """Draw per-anchor partners from within the batch.

    Every instance anchors in both modality directions.  Each anchor gets up
    to k_neg uniformly drawn different-category instances and up to k_pos
    same-category instances lying outside the time window; anchors with no
    eligible partner of a kind simply skip that kind.
    """
    cfg.validate()
    n = len(batch)
    t_months = [inst.ts / MONTH_SECONDS for inst in batch]
    triplets: list[Triplet] = []
    for i, inst in enumerate(batch):
        neg_pool = [j for j in range(n) if batch[j].category != inst.category]
        intra_pool = [
            j
            for j in range(n)
            if j != i
            and batch[j].category == inst.category
            and abs(t_months[j] - t_months[i]) > cfg.window_months
        ]
        for modality in ("visual", "text"):
            opp = _opposite(modality)
            if neg_pool and cfg.k_neg:
                k = min(cfg.k_neg, len(neg_pool))
                for pick in rng.sample_indices(len(neg_pool), k):
                    j = neg_pool[int(pick)]
                    triplets.append(
                        Triplet(
                            anchor=(inst.id, modality),
                            positive=(inst.id, opp),
                            negative=(batch[j].id, opp),
                            kind=INTER,
                        )
                    )
            if intra_pool and cfg.k_pos:
                k = min(cfg.k_pos, len(intra_pool))
                for pick in rng.sample_indices(len(intra_pool), k):
                    j = intra_pool[int(pick)]
                    triplets.append(
                        Triplet(
                            anchor=(inst.id, modality),
                            positive=(batch[j].id, opp),
                            negative=None,
                            kind=INTRA,
                        )
                    )
    return triplets


def _compile_triplets(
    batch: list[Instance], triplets: list[Triplet], cfg: LossConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flatten triplets into the parallel arrays the kernel consumes."""
    pos_of = {inst.id: i for i, inst in enumerate(batch)}
    t_months = [inst.ts / MONTH_SECONDS for inst in batch]
    k = len(triplets)
    a_idx = np.empty(k, dtype=np.int64)
    a_vis = np.empty(k, dtype=np.uint8)
    o_idx = np.empty(k, dtype=np.int64)
    weight = np.empty(k, dtype=np.float64)
    margin = np.empty(k, dtype=np.float64)
    is_intra = np.empty(k, dtype=np.uint8)
    for r, tri in enumerate(triplets):
        aid, amod = tri.anchor
        if amod not in ("visual", "text"):
            raise DataError(f"bad anchor modality {amod!r}")
        try:
            a = pos_of[aid]
        except KeyError:
            raise DataError(f"triplet anchor {aid!r} not in batch") from None
        if tri.kind == INTER:
            if tri.negative is None:
                raise DataError("inter triplet lacks a negative")
            pid, _ = tri.positive
            if pid != aid:
                raise DataError("inter positive must be the anchor's counterpart")
            oid, _ = tri.negative
            try:
                o = pos_of[oid]
            except KeyError:
                raise DataError(f"triplet negative {oid!r} not in batch") from None
            if batch[o].category == batch[a].category:
                raise DataError("inter negative shares the anchor's category")
            weight[r] = 1.0
            margin[r] = cfg.margin
            is_intra[r] = 0
        elif tri.kind == INTRA:
            oid, _ = tri.positive
            try:
                o = pos_of[oid]
            except KeyError:
                raise DataError(f"triplet positive {oid!r} not in batch") from None
            if o == a:
                raise DataError("intra positive must be a different instance")
            if batch[o].category != batch[a].category:
                raise DataError("intra positive must share the anchor's category")
            weight[r] = intra_weight(t_months[a], t_months[o], cfg)
            margin[r] = cfg.effective_intra_margin
            is_intra[r] = 1
        else:
            raise DataError(f"unknown triplet kind {tri.kind!r}")
        a_idx[r] = a
        a_vis[r] = 1 if amod == "visual" else 0
        o_idx[r] = o
    return a_idx, a_vis, o_idx, weight, margin, is_intra


def batch_loss_and_grads(
    params: ModelParams,
    batch: list[Instance],
    triplets: list[Triplet],
    cfg: LossConfig,
    span: Timespan,
    freeze_time: bool = False,
) -> tuple[LossValue, ModelParams]:
    """Loss over a triplet batch and exact gradients for every parameter.

    Embeddings are computed at each instance's own normalized timestamp
    (or at 0 for every instance when ``freeze_time`` is set).  The decay
    weight and the window test are constants with respect to parameters;
    gradients flow through the hinge, the dot products, the normalization,
    and all tanh layers.
    """
    cfg.validate()
    xv = np.ascontiguousarray([inst.visual for inst in batch], dtype=np.float64)
    xt = np.ascontiguousarray([inst.text for inst in batch], dtype=np.float64)
    if freeze_time:
        u = np.zeros(len(batch), dtype=np.float64)
    else:
        u = np.asarray(
            [normalize_ts(inst.ts, span) for inst in batch], dtype=np.float64
        )

    fwd = _kernels.forward_pair(
        params.w_vh, params.b_vh, params.w_th, params.b_th,
        params.w_time, params.b_time, params.w_vo, params.b_vo,
        params.w_to, params.b_to, xv, xt, u,
    )
    hv, ht, tau, zv, zt, nv, nt, ev, et = fwd

    a_idx, a_vis, o_idx, weight, margin, is_intra = _compile_triplets(
        batch, triplets, cfg
    )
    inter_sum, intra_sum, active, d_ev, d_et = _kernels.accumulate_triplets(
        ev, et, a_idx, a_vis, o_idx, weight, margin, is_intra
    )
    grads_tuple = _kernels.backward_pair(
        params.w_vo, params.w_to, xv, xt, u,
        hv, ht, tau, zv, zt, nv, nt, ev, et, d_ev, d_et,
    )
    names = ("w_vh", "b_vh", "w_th", "b_th", "w_time", "b_time",
             "w_vo", "b_vo", "w_to", "b_to")
    grads = ModelParams(**dict(zip(names, grads_tuple)))
    value = LossValue(
        total=float(inter_sum + intra_sum),
        inter_part=float(inter_sum),
        intra_part=float(intra_sum),
        active_triplet_count=int(active),
    )
    return value, grads
