"""Command line pipeline: synth, train, train-binned, eval, embed, neighbors.

Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numerical
failure.  Every CSV artifact starts with comment lines carrying the run
seed, a hash of the resolved configuration, and the tool version, so two
runs with the same inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import model as model_mod
from . import synth as synth_mod
from .dataset import (
    Dataset,
    bin_monthly,
    load_jsonl,
    parse_timestamp,
    shared_timespan,
    split as split_dataset,
    write_jsonl,
)
from .errors import DataError, NumericalError, UsageError
from .evals import (
    BinnedProjector,
    Projector,
    bounded_semantics,
    coarse_alignment,
    dispersion,
    evolution_timeline,
    local_alignment,
    projector_from_checkpoint,
    time_period_inference,
    write_report_csv,
    write_series_csv,
)
from .loss import LossConfig
from .model import ModelConfig
from .numerics import Rng
from .trainer import TrainConfig, load_binned, save_binned, train, train_binned

PROTOCOLS = ("coarse", "local", "bounded", "period", "dispersion")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with code 2
        raise UsageError(message)


def _config_hash(obj: dict) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _run_meta(args: argparse.Namespace) -> list[tuple[str, str]]:
    cfg = {
        k: v
        for k, v in sorted(vars(args).items())
        if k != "func" and isinstance(v, (str, int, float, bool, type(None), list, tuple))
    }
    return [
        ("seed", str(getattr(args, "seed", 0))),
        ("config_hash", _config_hash(cfg)),
        ("version", __version__),
    ]


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from None


# --- synth -------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    if args.config:
        cfg = synth_mod.SynthConfig.from_json(_load_json(args.config))
        if args.seed is not None:
            cfg = synth_mod.SynthConfig.from_json({**cfg.to_json(), "seed": args.seed})
    else:
        preset = synth_mod.shifted_config if args.preset == "shifted" else synth_mod.stationary_config
        cfg = preset(seed=args.seed if args.seed is not None else 0)
    args.seed = cfg.seed  # echoed in metadata

    ds, truth = synth_mod.generate(cfg)
    write_jsonl(ds, args.out)
    sidecar = args.truth_out or args.out + ".truth.json"
    doc = {"version": __version__, "config_hash": _config_hash(cfg.to_json())}
    doc.update(truth.to_json())
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")

    split_paths = (args.train_out, args.val_out, args.test_out)
    if any(split_paths):
        if not all(split_paths):
            raise UsageError("--train-out, --val-out, --test-out must be given together")
        tr, va, te = split_dataset(ds, Rng(cfg.seed).split("split"))
        write_jsonl(tr, args.train_out)
        write_jsonl(va, args.val_out)
        write_jsonl(te, args.test_out)
    print(f"wrote {len(ds)} instances to {args.out}")
    return 0


# --- train -------------------------------------------------------------------

def _train_config_from_args(args: argparse.Namespace, file_cfg: dict) -> TrainConfig:
    def pick(flag, key, default):
        if flag is not None:
            return flag
        return file_cfg.get(key, default)

    loss_file = file_cfg.get("loss", {})
    loss = LossConfig(
        margin=float(pick(args.margin, "margin", loss_file.get("margin", 1.0))),
        window_months=float(
            pick(args.window, "window_months", loss_file.get("window_months", 4.0))
        ),
        decay=float(pick(args.decay, "decay", loss_file.get("decay", 0.1))),
        intra_margin=loss_file.get("intra_margin"),
        k_neg=int(loss_file.get("k_neg", 1)),
        k_pos=int(loss_file.get("k_pos", 1)),
    )
    return TrainConfig(
        learning_rate=float(pick(args.lr, "learning_rate", 0.005)),
        momentum=float(pick(args.momentum, "momentum", 0.9)),
        epochs=int(pick(args.epochs, "epochs", 25)),
        batch_size=int(pick(args.batch_size, "batch_size", 64)),
        seed=int(pick(args.seed, "seed", 0)),
        loss=loss,
    )


def _model_config_from_args(
    args: argparse.Namespace, file_cfg: dict, train_ds: Dataset, seed: int
) -> ModelConfig:
    model_file = file_cfg.get("model", {})

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return model_file.get(key, default)

    return ModelConfig(
        d_v=train_ds.d_v,
        d_t=train_ds.d_t,
        hidden_dim=int(pick(args.hidden_dim, "hidden_dim", 1024)),
        time_dim=int(pick(args.time_dim, "time_dim", 200)),
        embed_dim=int(pick(args.embed_dim, "embed_dim", 200)),
        use_bias=not args.no_bias and model_file.get("use_bias", True),
        seed=seed,
    )


def _load_train_val(args: argparse.Namespace) -> tuple[Dataset, Dataset]:
    train_ds = load_jsonl(args.data, vocab_size=args.vocab_size)
    val_ds = load_jsonl(args.val, vocabulary=train_ds.vocabulary)
    span = shared_timespan(train_ds, val_ds)
    return train_ds.with_timespan(span), val_ds.with_timespan(span)


def cmd_train(args: argparse.Namespace) -> int:
    file_cfg = _load_json(args.config) if args.config else {}
    train_ds, val_ds = _load_train_val(args)
    cfg = _train_config_from_args(args, file_cfg)
    args.seed = cfg.seed
    model_cfg = _model_config_from_args(args, file_cfg, train_ds, cfg.seed)
    cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        loss=cfg.loss,
        model=model_cfg,
    )
    kind = model_mod.KIND_STATIC if args.static else model_mod.KIND_CONTINUOUS
    params, report = train(train_ds, val_ds, cfg, kind=kind)
    model_mod.save(
        params,
        model_cfg,
        train_ds.timespan,
        args.out,
        kind=kind,
        vocabulary=train_ds.vocabulary,
    )
    if args.report:
        import csv as _csv

        with open(args.report, "w", encoding="utf-8", newline="") as fh:
            for key, value in _run_meta(args):
                fh.write(f"# {key}={value}\n")
            writer = _csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for row in report.epochs:
                writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss)])
    print(
        f"trained {kind} model: best epoch {report.selected_epoch}, "
        f"val loss {report.epochs[report.selected_epoch].val_loss:.6g}, "
        f"saved {args.out}"
    )
    return 0


def cmd_train_binned(args: argparse.Namespace) -> int:
    file_cfg = _load_json(args.config) if args.config else {}
    train_ds, val_ds = _load_train_val(args)
    cfg = _train_config_from_args(args, file_cfg)
    args.seed = cfg.seed
    model_cfg = _model_config_from_args(args, file_cfg, train_ds, cfg.seed)
    cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        loss=cfg.loss,
        model=model_cfg,
    )
    bins, excluded = bin_monthly(train_ds, args.min_bin_size)
    if excluded:
        print(f"dropping {len(excluded)} instances in months under "
              f"{args.min_bin_size} instances", file=sys.stderr)
    bm = train_binned(train_ds, val_ds, cfg, bins)
    save_binned(bm, args.out)
    print(f"trained {len(bins)} monthly models, saved under {args.out}")
    return 0


# --- eval --------------------------------------------------------------------

def _load_projector(ckpt_path: str) -> tuple[Projector, object]:
    """Returns (projector, vocabulary-or-None) for a file or directory path."""
    if os.path.isdir(ckpt_path):
        bm = load_binned(ckpt_path)
        return BinnedProjector(bm), bm.vocabulary
    ckpt = model_mod.load(ckpt_path)
    return projector_from_checkpoint(ckpt), ckpt.vocabulary


def cmd_eval(args: argparse.Namespace) -> int:
    projector, vocab = _load_projector(args.ckpt)
    test = load_jsonl(args.test, vocabulary=vocab)
    meta = _run_meta(args)
    if getattr(projector, "freeze_time", False) and args.protocol == "dispersion":
        print("note: dispersion of a static model does not vary with time "
              "except through the candidate pool", file=sys.stderr)

    if args.protocol == "coarse":
        report = coarse_alignment(projector, test)
    elif args.protocol == "local":
        report = local_alignment(
            projector, test, queries_per_cat=args.queries_per_cat,
            k=args.k if args.k is not None else 10, seed=args.seed,
        )
    elif args.protocol == "bounded":
        report, series = bounded_semantics(projector, test)
        series_path = args.series_out or args.out + ".series.csv"
        write_series_csv(
            ["month", "i2t", "t2i", "avg", "n_queries"], series, series_path, meta
        )
    elif args.protocol == "period":
        report = time_period_inference(
            projector, test,
            k=args.k if args.k is not None else 50,
            window_months=args.window if args.window is not None else 4,
        )
    elif args.protocol == "dispersion":
        if not args.query_id:
            raise UsageError("--protocol dispersion requires --query-id")
        series = dispersion(
            projector, test, args.query_id, modality=args.modality,
            k=args.k if args.k is not None else 5,
        )
        write_series_csv(["month", "dispersion", "n_candidates"], series, args.out, meta)
        print(f"wrote dispersion series to {args.out}")
        return 0
    else:  # unreachable through argparse choices
        raise UsageError(f"unknown protocol {args.protocol!r}")

    write_report_csv(report, args.out, meta)
    if args.summary_json:
        with open(args.summary_json, "w", encoding="utf-8") as fh:
            json.dump(report.summary(), fh, indent=2)
            fh.write("\n")
    parts = ", ".join(
        f"{d.direction}={d.aggregate:.4f}" for d in report.directions
    )
    print(f"{report.metric}: {parts}, avg={report.average:.4f}; wrote {args.out}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    projector, _ = _load_projector(args.ckpt)
    vec = _load_json(args.input)
    if not isinstance(vec, list):
        raise DataError(f"{args.input} must hold a JSON array")
    x = np.asarray(vec, dtype=np.float64)
    ts = parse_timestamp(args.ts)
    emb = projector.embed_one(x, args.modality, ts)
    print(json.dumps([float(v) for v in emb]))
    return 0


def cmd_neighbors(args: argparse.Namespace) -> int:
    projector, vocab = _load_projector(args.ckpt)
    test = load_jsonl(args.data, vocabulary=vocab)
    timeline = evolution_timeline(
        projector, test, args.query_id, modality=args.modality,
        top_bins=args.top_bins, per_bin=args.per_bin,
    )
    doc = {"query_id": args.query_id, "modality": args.modality, "bins": timeline}
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


# --- wiring ------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate (default 0.005)")
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--window", type=float, help="intra window in months (default 4)")
    p.add_argument("--decay", type=float, help="temporal decay rate (default 0.1)")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--time-dim", type=int, dest="time_dim")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--no-bias", action="store_true", dest="no_bias",
                   help="drop bias terms (pure matrix-product layers)")
    p.add_argument("--vocab-size", type=int, dest="vocab_size", default=1024)
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap; the reference pipeline is serial")


def build_parser() -> _Parser:
    parser = _Parser(prog="diachron", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--preset", choices=("shifted", "stationary"), default="shifted")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="dataset JSONL path")
    p.add_argument("--truth-out", dest="truth_out",
                   help="ground-truth sidecar (default OUT.truth.json)")
    p.add_argument("--train-out", dest="train_out")
    p.add_argument("--val-out", dest="val_out")
    p.add_argument("--test-out", dest="test_out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit the time-conditioned model")
    p.add_argument("--data", required=True, help="training JSONL")
    p.add_argument("--val", required=True, help="validation JSONL")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--static", action="store_true",
                   help="freeze the time input at 0 and drop intra triplets")
    p.add_argument("--report", help="write per-epoch losses CSV here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-binned", help="per-month models plus alignment")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--min-bin-size", type=int, dest="min_bin_size", default=100)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_binned)

    p = sub.add_parser("eval", help="run a retrieval protocol")
    p.add_argument("--ckpt", required=True,
                   help="checkpoint file, or a train-binned directory")
    p.add_argument("--test", required=True, help="test JSONL")
    p.add_argument("--protocol", required=True, choices=PROTOCOLS)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--summary-json", dest="summary_json")
    p.add_argument("--series-out", dest="series_out",
                   help="per-month series CSV (bounded protocol)")
    p.add_argument("--k", type=int, help="cutoff; defaults per protocol")
    p.add_argument("--window", type=int, help="relevance window in months (period)")
    p.add_argument("--queries-per-cat", type=int, dest="queries_per_cat", default=50)
    p.add_argument("--query-id", dest="query_id", help="dispersion query instance")
    p.add_argument("--modality", choices=("visual", "text"), default="visual")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval, static_warned=False)

    p = sub.add_parser("embed", help="project one raw vector")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="JSON file holding the vector")
    p.add_argument("--ts", required=True, help="ISO-8601 timestamp or epoch seconds")
    p.add_argument("--modality", required=True, choices=("visual", "text"))
    p.set_defaults(func=cmd_embed, seed=0)

    p = sub.add_parser("neighbors", help="closest months for one query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="candidate JSONL")
    p.add_argument("--query-id", dest="query_id", required=True)
    p.add_argument("--modality", choices=("visual", "text"), default="text")
    p.add_argument("--top-bins", type=int, dest="top_bins", default=20)
    p.add_argument("--per-bin", type=int, dest="per_bin", default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_neighbors, seed=0)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return 1
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
