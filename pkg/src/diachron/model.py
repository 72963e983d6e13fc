"""The time-conditioned projection network and its checkpoint format.

Two tanh layers per modality with a shared tanh time layer spliced in
between: h = tanh(W_h x + b), z = tanh(W_o [h; tau] + b), e = z / |z|, where
tau = tanh(W_time u + b) embeds the normalized timestamp u in [0, 1].  Both
modalities land in the same unit sphere, so similarity is a plain dot
product.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import Timespan, Vocabulary
from .errors import CheckpointError, DataError, NearZeroNormError
from .numerics import ZERO_NORM_EPS, Rng, l2_normalize

MODALITIES = ("visual", "text")

CHECKPOINT_VERSION = 1

# how the time input is treated downstream of training
KIND_CONTINUOUS = "continuous"
KIND_STATIC = "static"
MODEL_KINDS = (KIND_CONTINUOUS, KIND_STATIC)


@dataclass(frozen=True)
class ModelConfig:
    d_v: int
    d_t: int
    hidden_dim: int = 1024
    time_dim: int = 200
    embed_dim: int = 200
    use_bias: bool = True
    seed: int = 0

    def validate(self) -> None:
        for name in ("d_v", "d_t", "hidden_dim", "time_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")

    def to_json(self) -> dict:
        return {
            "d_v": self.d_v,
            "d_t": self.d_t,
            "hidden_dim": self.hidden_dim,
            "time_dim": self.time_dim,
            "embed_dim": self.embed_dim,
            "use_bias": self.use_bias,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        try:
            cfg = cls(
                d_v=int(obj["d_v"]),
                d_t=int(obj["d_t"]),
                hidden_dim=int(obj["hidden_dim"]),
                time_dim=int(obj["time_dim"]),
                embed_dim=int(obj["embed_dim"]),
                use_bias=bool(obj.get("use_bias", True)),
                seed=int(obj.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"bad model config in checkpoint: {exc}") from None
        cfg.validate()
        return cfg


# (name, (rows_field, cols_field)) in storage order; biases interleaved
_WEIGHT_SHAPES: tuple[tuple[str, tuple[str, str | None]], ...] = (
    ("w_vh", ("hidden_dim", "d_v")),
    ("b_vh", ("hidden_dim", None)),
    ("w_th", ("hidden_dim", "d_t")),
    ("b_th", ("hidden_dim", None)),
    ("w_time", ("time_dim", "one")),
    ("b_time", ("time_dim", None)),
    ("w_vo", ("embed_dim", "concat")),
    ("b_vo", ("embed_dim", None)),
    ("w_to", ("embed_dim", "concat")),
    ("b_to", ("embed_dim", None)),
)


def _expected_shape(cfg: ModelConfig, name: str) -> tuple[int, ...]:
    rows_f, cols_f = dict(_WEIGHT_SHAPES)[name]
    rows = getattr(cfg, rows_f)
    if cols_f is None:
        return (rows,)
    if cols_f == "one":
        return (rows, 1)
    if cols_f == "concat":
        return (rows, cfg.hidden_dim + cfg.time_dim)
    return (rows, getattr(cfg, cols_f))


@dataclass
class ModelParams:
    w_vh: np.ndarray
    b_vh: np.ndarray
    w_th: np.ndarray
    b_th: np.ndarray
    w_time: np.ndarray
    b_time: np.ndarray
    w_vo: np.ndarray
    b_vo: np.ndarray
    w_to: np.ndarray
    b_to: np.ndarray

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name, _ in _WEIGHT_SHAPES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.named_arrays().items()})

    def check(self, cfg: ModelConfig) -> None:
        for name, arr in self.named_arrays().items():
            want = _expected_shape(cfg, name)
            if arr.shape != want:
                raise CheckpointError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray = field(repr=False)
    modality: str
    t: float


def _glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array(-bound, bound, (fan_out, fan_in))


def init(cfg: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, one stream per tensor."""
    cfg.validate()
    rng = Rng(cfg.seed)
    arrays: dict[str, np.ndarray] = {}
    for name, _ in _WEIGHT_SHAPES:
        shape = _expected_shape(cfg, name)
        if len(shape) == 1:
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            arrays[name] = _glorot(rng.split("init", name), shape[0], shape[1])
    return ModelParams(**arrays)


def _check_u(u: float) -> float:
    u = float(u)
    if not (0.0 <= u <= 1.0) or not math.isfinite(u):
        raise DataError(f"normalized time {u} outside [0, 1]")
    return u


def time_embed(params: ModelParams, u: float) -> np.ndarray:
    u = _check_u(u)
    return np.tanh(params.w_time[:, 0] * u + params.b_time)


def project(params: ModelParams, x: np.ndarray, modality: str, u: float) -> Embedding:
    """One instance through one branch at normalized time u."""
    u = _check_u(u)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if modality == "visual":
        w_h, b_h, w_o, b_o = params.w_vh, params.b_vh, params.w_vo, params.b_vo
    elif modality == "text":
        w_h, b_h, w_o, b_o = params.w_th, params.b_th, params.w_to, params.b_to
    else:
        raise DataError(f"unknown modality {modality!r}")
    if x.shape[0] != w_h.shape[1]:
        raise DataError(
            f"{modality} input has dim {x.shape[0]}, model expects {w_h.shape[1]}"
        )
    h = np.tanh(w_h @ x + b_h)
    tau = time_embed(params, u)
    z = np.tanh(w_o @ np.concatenate([h, tau]) + b_o)
    return Embedding(vector=l2_normalize(z), modality=modality, t=u)


def project_batch(
    params: ModelParams, xv: np.ndarray, xt: np.ndarray, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Both branches for a batch of paired inputs sharing per-row times.

    Returns (visual_embeddings, text_embeddings), each row unit norm.
    """
    xv = np.ascontiguousarray(xv, dtype=np.float64)
    xt = np.ascontiguousarray(xt, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if xv.ndim != 2 or xt.ndim != 2 or u.ndim != 1:
        raise DataError("project_batch wants 2-d inputs and a 1-d time vector")
    if not (xv.shape[0] == xt.shape[0] == u.shape[0]):
        raise DataError("batch sizes disagree across inputs")
    if xv.shape[1] != params.w_vh.shape[1] or xt.shape[1] != params.w_th.shape[1]:
        raise DataError(
            f"input dims ({xv.shape[1]}, {xt.shape[1]}) do not match model "
            f"({params.w_vh.shape[1]}, {params.w_th.shape[1]})"
        )
    if u.size and (u.min() < 0.0 or u.max() > 1.0 or not np.all(np.isfinite(u))):
        raise DataError("normalized times outside [0, 1]")
    out = _kernels.forward_pair(
        params.w_vh, params.b_vh, params.w_th, params.b_th,
        params.w_time, params.b_time, params.w_vo, params.b_vo,
        params.w_to, params.b_to, xv, xt, u,
    )
    _, _, _, _, _, nv, nt, ev, et = out
    if nv.size and (nv.min() <= ZERO_NORM_EPS or nt.min() <= ZERO_NORM_EPS):
        raise NearZeroNormError("projection collapsed to near-zero norm")
    return ev, et


# --- checkpoints ------------------------------------------------------------

@dataclass(frozen=True)
class Checkpoint:
    """A saved model: parameters plus everything needed to use them."""

    params: ModelParams
    config: ModelConfig
    timespan: Timespan
    kind: str = KIND_CONTINUOUS
    vocabulary: Vocabulary | None = None

    def __iter__(self):
        return iter((self.params, self.config, self.timespan))


def save(
    params: ModelParams,
    cfg: ModelConfig,
    span: Timespan,
    path: str,
    kind: str = KIND_CONTINUOUS,
    vocabulary: Vocabulary | None = None,
) -> None:
    """Write a single JSON checkpoint; floats round-trip bit exactly."""
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    params.check(cfg)
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": cfg.to_json(),
        "timespan": {"t_s": span.t_s, "t_f": span.t_f},
        "weights": {k: v.tolist() for k, v in params.named_arrays().items()},
    }
    if vocabulary is not None:
        doc["vocabulary"] = vocabulary.to_json()
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load(path: str) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"corrupt checkpoint {path}: not a JSON object")
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format_version {version!r}, "
            f"this build reads {CHECKPOINT_VERSION}"
        )
    kind = doc.get("kind", KIND_CONTINUOUS)
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"checkpoint {path} has unknown kind {kind!r}")
    cfg = ModelConfig.from_json(doc.get("config", {}))
    try:
        span = Timespan(float(doc["timespan"]["t_s"]), float(doc["timespan"]["t_f"]))
        weights = doc["weights"]
        arrays = {
            name: np.asarray(weights[name], dtype=np.float64)
            for name, _ in _WEIGHT_SHAPES
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    params = ModelParams(**arrays)
    params.check(cfg)
    vocab = None
    if "vocabulary" in doc:
        try:
            vocab = Vocabulary.from_json(doc["vocabulary"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"corrupt vocabulary in {path}: {exc}") from None
    return Checkpoint(params=params, config=cfg, timespan=span, kind=kind, vocabulary=vocab)
