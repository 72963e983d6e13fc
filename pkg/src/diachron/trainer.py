"""SGD training loops, the binned baseline, and embedding-space alignment.

One optimizer serves three model flavors: the continuous time-conditioned
model, a static variant (time input frozen at 0, no same-category triplets),
and a per-month sequence of static models whose output spaces are stitched
together by chained orthogonal Procrustes rotations into the final month's
frame.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_mod
from .dataset import Bin, Dataset, Timespan, month_number
from .errors import CheckpointError, DataError, NumericalError
from .loss import LossConfig, batch_loss_and_grads, sample_batch_triplets
from .model import (
    KIND_CONTINUOUS,
    KIND_STATIC,
    Checkpoint,
    ModelConfig,
    ModelParams,
    project_batch,
)
from .numerics import Rng, svd


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    epochs: int = 25
    batch_size: int = 64
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig | None = None

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise DataError("momentum must be in [0, 1)")
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.batch_size < 2:
            raise DataError("batch_size must be >= 2")
        self.loss.validate()
        if self.model is not None:
            self.model.validate()

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss": self.loss.to_json(),
            "model": None if self.model is None else self.model.to_json(),
        }


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass(frozen=True)
class TrainReport:
    epochs: tuple[EpochStats, ...]
    selected_epoch: int
    wall_time_s: float

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for row in self.epochs:
                writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss)])


def _resolve_model_config(cfg: TrainConfig, train: Dataset) -> ModelConfig:
    if cfg.model is not None:
        mc = cfg.model
        if mc.d_v != train.d_v or mc.d_t != train.d_t:
            raise DataError(
                f"model dims ({mc.d_v}, {mc.d_t}) do not match data "
                f"({train.d_v}, {train.d_t})"
            )
        return mc
    return ModelConfig(d_v=train.d_v, d_t=train.d_t, seed=cfg.seed)


def _epoch_batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    out = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        if len(chunk) >= 2:  # a single instance cannot form a triplet
            out.append(chunk)
    return out


def _dataset_instances(ds: Dataset) -> list:
    return [ds.instance(i) for i in range(len(ds))]


def _dataset_loss(
    params: ModelParams,
    insts: list,
    batches: list[np.ndarray],
    triplets_per_batch: list,
    loss_cfg: LossConfig,
    span: Timespan,
    freeze_time: bool,
) -> float:
    total = 0.0
    for rows, triplets in zip(batches, triplets_per_batch):
        batch = [insts[i] for i in rows]
        value, _ = batch_loss_and_grads(
            params, batch, triplets, loss_cfg, span, freeze_time=freeze_time
        )
        total += value.total
    return total


def train(
    train_ds: Dataset,
    val_ds: Dataset,
    cfg: TrainConfig,
    kind: str = KIND_CONTINUOUS,
) -> tuple[ModelParams, TrainReport]:
    """Fit one model; returns the parameters of the best validation epoch.

    The static flavor freezes the time input at 0 and samples no
    same-category triplets, which reduces the objective to the plain
    cross-modal ranking loss.
    """
    cfg.validate()
    if kind not in model_mod.MODEL_KINDS:
        raise DataError(f"unknown model kind {kind!r}")
    if train_ds.d_v != val_ds.d_v or train_ds.d_t != val_ds.d_t:
        raise DataError("train and validation dims disagree")
    if train_ds.timespan != val_ds.timespan:
        raise DataError("train and validation timespans disagree")
    freeze = kind == KIND_STATIC
    loss_cfg = replace(cfg.loss, k_pos=0) if freeze else cfg.loss

    t0 = time.perf_counter()
    model_cfg = _resolve_model_config(cfg, train_ds)
    params = model_mod.init(model_cfg)
    span = train_ds.timespan
    rng = Rng(cfg.seed)

    train_insts = _dataset_instances(train_ds)
    val_insts = _dataset_instances(val_ds)
    # one fixed validation triplet sample keeps epochs comparable
    val_rng = rng.split("val")
    val_batches = _epoch_batches(np.arange(len(val_ds)), cfg.batch_size)
    val_triplets = [
        sample_batch_triplets([val_insts[i] for i in rows], val_rng.split(b), loss_cfg)
        for b, rows in enumerate(val_batches)
    ]

    velocity = {k: np.zeros_like(v) for k, v in params.named_arrays().items()}
    bias_names = {"b_vh", "b_th", "b_time", "b_vo", "b_to"}
    update_names = [
        name
        for name in velocity
        if model_cfg.use_bias or name not in bias_names
    ]

    history: list[EpochStats] = []
    best_epoch = -1
    best_val = math.inf
    best_params = params.copy()
    for epoch in range(cfg.epochs):
        order = rng.split("shuffle", epoch).shuffled(len(train_ds))
        epoch_loss = 0.0
        for b, rows in enumerate(_epoch_batches(order, cfg.batch_size)):
            batch = [train_insts[i] for i in rows]
            triplets = sample_batch_triplets(
                batch, rng.split("sample", epoch, b), loss_cfg
            )
            value, grads = batch_loss_and_grads(
                params, batch, triplets, loss_cfg, span, freeze_time=freeze
            )
            if not math.isfinite(value.total):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {b}; "
                    "lower the learning rate or check the data"
                )
            epoch_loss += value.total
            g_arrays = grads.named_arrays()
            p_arrays = params.named_arrays()
            for name in update_names:
                v = velocity[name]
                v *= cfg.momentum
                v -= cfg.learning_rate * g_arrays[name]
                p_arrays[name] += v
        val_loss = _dataset_loss(
            params, val_insts, val_batches, val_triplets, loss_cfg, span, freeze
        )
        history.append(EpochStats(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()

    report = TrainReport(
        epochs=tuple(history),
        selected_epoch=best_epoch,
        wall_time_s=time.perf_counter() - t0,
    )
    return best_params, report


def train_continuous(
    train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig
) -> tuple[ModelParams, TrainReport]:
    return train(train_ds, val_ds, cfg, kind=KIND_CONTINUOUS)


def train_static(
    train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig
) -> tuple[ModelParams, TrainReport]:
    return train(train_ds, val_ds, cfg, kind=KIND_STATIC)


# --- Procrustes alignment ---------------------------------------------------

def procrustes(m_t: np.ndarray, m_next: np.ndarray) -> np.ndarray:
    """Orthogonal map Omega minimizing |m_t @ Omega - m_next|_F."""
    m_t = np.asarray(m_t, dtype=np.float64)
    m_next = np.asarray(m_next, dtype=np.float64)
    if m_t.shape != m_next.shape or m_t.ndim != 2:
        raise DataError(f"procrustes shapes {m_t.shape} vs {m_next.shape}")
    u, _, v = svd(m_t.T @ m_next)
    return u @ v.T


@dataclass
class BinnedModel:
    """Per-month static models plus rotations into the final month's frame."""

    config: ModelConfig
    timespan: Timespan
    bins: list[Bin]
    models: list[ModelParams]
    rotations: list[np.ndarray]
    vocabulary: object | None = None

    def __post_init__(self) -> None:
        if not (len(self.bins) == len(self.models) == len(self.rotations)):
            raise DataError("bins, models, rotations lengths disagree")
        if not self.bins:
            raise DataError("binned model needs at least one bin")

    def bin_for_ts(self, ts: float) -> int:
        """Nearest kept bin by calendar-month distance; earlier wins ties."""
        num = month_number(ts)
        best, best_d = 0, None
        for i, b in enumerate(self.bins):
            d = abs(month_number(b.month_start) - num)
            if best_d is None or d < best_d:
                best, best_d = i, d
        return best

    def embed(
        self, xv: np.ndarray, xt: np.ndarray, bin_index: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Project with the bin's model and rotate into the final frame.

        Rotation preserves norms, so rows stay unit length.
        """
        n = xv.shape[0]
        u = np.zeros(n, dtype=np.float64)
        ev, et = project_batch(self.models[bin_index], xv, xt, u)
        rot = self.rotations[bin_index]
        return ev @ rot, et @ rot


def _alignment_rows(bin_rows: np.ndarray, cap: int, rng: Rng) -> np.ndarray:
    if len(bin_rows) <= cap:
        return bin_rows
    picks = rng.sample_indices(len(bin_rows), cap)
    return bin_rows[np.sort(picks)]


def align_chain(
    bm: BinnedModel, sample: Dataset, cap: int = 2000, seed: int = 0
) -> BinnedModel:
    """Fill in rotations by aligning each bin to its successor.

    For adjacent bins (b, b+1) the same bin-b instances are embedded by both
    models; the Procrustes map between the two point clouds is the bin-to-bin
    rotation, and composing along the chain reaches the final bin's frame.
    """
    n = len(bm.bins)
    rng = Rng(seed)
    eye = np.eye(bm.config.embed_dim)
    rotations: list[np.ndarray] = [eye.copy() for _ in range(n)]
    step: list[np.ndarray] = []
    for b in range(n - 1):
        rows = _alignment_rows(bm.bins[b].rows, cap, rng.split("align", b))
        if rows.size == 0:
            raise DataError(f"bin {bm.bins[b].month} has no alignment sample")
        xv = sample.visual[rows]
        xt = sample.text[rows]
        u = np.zeros(len(rows), dtype=np.float64)
        ev_b, et_b = project_batch(bm.models[b], xv, xt, u)
        ev_n, et_n = project_batch(bm.models[b + 1], xv, xt, u)
        m_b = np.vstack([ev_b, et_b])
        m_n = np.vstack([ev_n, et_n])
        step.append(procrustes(m_b, m_n))
    for b in range(n - 2, -1, -1):
        rotations[b] = step[b] @ rotations[b + 1]
    return BinnedModel(
        config=bm.config,
        timespan=bm.timespan,
        bins=bm.bins,
        models=bm.models,
        rotations=rotations,
        vocabulary=bm.vocabulary,
    )


def train_binned(
    train_ds: Dataset,
    val_ds: Dataset,
    cfg: TrainConfig,
    bins: list[Bin],
    align_cap: int = 2000,
) -> BinnedModel:
    """One static model per monthly bin, then chain-aligned rotations.

    Each bin trains only on its own instances.  Validation rows from the
    same calendar month drive epoch selection; a bin without any falls back
    to its final epoch.
    """
    cfg.validate()
    if not bins:
        raise DataError("no bins to train")
    model_cfg = _resolve_model_config(cfg, train_ds)
    val_months = np.asarray([month_number(t) for t in val_ds.ts], dtype=np.int64)

    models: list[ModelParams] = []
    seeds = Rng(cfg.seed)
    for b in bins:
        if len(b.rows) < 2:
            raise DataError(f"bin {b.month} too small to form a batch")
        bin_train = train_ds.subset(b.rows)
        month = month_number(b.month_start)
        val_rows = np.nonzero(val_months == month)[0]
        bin_seed = seeds.split("bin", b.index).integer(2**63)
        bin_cfg = replace(cfg, seed=bin_seed, model=model_cfg)
        if val_rows.size >= 2:
            bin_val = val_ds.subset(val_rows)
            params, _ = train(bin_train, bin_val, bin_cfg, kind=KIND_STATIC)
        else:
            # no held-out rows this month: keep the last epoch's parameters
            params, _ = _train_without_selection(bin_train, bin_cfg)
        models.append(params)

    bm = BinnedModel(
        config=model_cfg,
        timespan=train_ds.timespan,
        bins=bins,
        models=models,
        rotations=[np.eye(model_cfg.embed_dim) for _ in bins],
        vocabulary=train_ds.vocabulary,
    )
    return align_chain(bm, train_ds, cap=align_cap, seed=cfg.seed)


def _train_without_selection(
    train_ds: Dataset, cfg: TrainConfig
) -> tuple[ModelParams, TrainReport]:
    """Static training that keeps the final epoch (no validation data)."""
    # reuse the main loop with the training set standing in for validation
    params, report = train(train_ds, train_ds, cfg, kind=KIND_STATIC)
    return params, report


# --- binned persistence ------------------------------------------------------

_BINNED_MANIFEST = "binned.json"


def save_binned(bm: BinnedModel, dirpath: str) -> None:
    """Directory of per-bin checkpoints plus a manifest with the rotations."""
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    for b, params in zip(bm.bins, bm.models):
        name = f"bin-{b.index:03d}.json"
        model_mod.save(
            params,
            bm.config,
            bm.timespan,
            os.path.join(dirpath, name),
            kind=KIND_STATIC,
        )
        entries.append(
            {
                "index": b.index,
                "month": b.month,
                "month_start": b.month_start,
                "checkpoint": name,
                "rotation": bm.rotations[b.index].tolist(),
            }
        )
    manifest = {
        "format_version": model_mod.CHECKPOINT_VERSION,
        "kind": "binned",
        "config": bm.config.to_json(),
        "timespan": {"t_s": bm.timespan.t_s, "t_f": bm.timespan.t_f},
        "bins": entries,
    }
    if bm.vocabulary is not None:
        manifest["vocabulary"] = bm.vocabulary.to_json()
    tmp = os.path.join(dirpath, _BINNED_MANIFEST + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
        fh.write("\n")
    os.replace(tmp, os.path.join(dirpath, _BINNED_MANIFEST))


def load_binned(dirpath: str) -> BinnedModel:
    path = os.path.join(dirpath, _BINNED_MANIFEST)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read binned manifest {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt binned manifest {path}: {exc}") from None
    if manifest.get("format_version") != model_mod.CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported binned manifest version in {path}")
    if manifest.get("kind") != "binned":
        raise CheckpointError(f"{path} is not a binned manifest")
    cfg = ModelConfig.from_json(manifest.get("config", {}))
    try:
        span = Timespan(
            float(manifest["timespan"]["t_s"]), float(manifest["timespan"]["t_f"])
        )
        raw_bins = manifest["bins"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt binned manifest {path}: {exc}") from None
    bins: list[Bin] = []
    models: list[ModelParams] = []
    rotations: list[np.ndarray] = []
    for i, entry in enumerate(raw_bins):
        try:
            if int(entry["index"]) != i:
                raise CheckpointError(f"{path}: bin indices out of order")
            ckpt: Checkpoint = model_mod.load(
                os.path.join(dirpath, str(entry["checkpoint"]))
            )
            rot = np.asarray(entry["rotation"], dtype=np.float64)
            bins.append(
                Bin(
                    index=i,
                    month=str(entry["month"]),
                    month_start=float(entry["month_start"]),
                    rows=np.empty(0, dtype=np.int64),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"corrupt binned manifest {path}: {exc}") from None
        if rot.shape != (cfg.embed_dim, cfg.embed_dim):
            raise CheckpointError(f"{path}: rotation {i} has shape {rot.shape}")
        models.append(ckpt.params)
        rotations.append(rot)
    vocab = None
    if "vocabulary" in manifest:
        from .dataset import Vocabulary

        try:
            vocab = Vocabulary.from_json(manifest["vocabulary"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"corrupt vocabulary in {path}: {exc}") from None
    return BinnedModel(
        config=cfg,
        timespan=span,
        bins=bins,
        models=models,
        rotations=rotations,
        vocabulary=vocab,
    )
