"""Command-line entry point wiring the full pipeline.

Subcommands: synth, preprocess, augment-preview, pretrain, finetune,
evaluate, crossval, report.  Exit codes: 0 success, 1 runtime/training
failure, 2 usage or configuration error.  Machine-readable JSON lines go
to stdout (and ``<out>/log.jsonl``); human diagnostics go to stderr.
Every run drops its resolved configuration into ``<out>/config.resolved``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .augment import make_view_pair
from .config import RunConfig, apply_overrides, format_config, load_config
from .data import make_splits, read_manifest, write_manifest, DatasetIndex, ScanRecord
from .errors import CogFatigueError, ConfigError
from .finetune import ClassifierModel, config_fingerprint, cross_validate, evaluate, finetune
from .metrics import Metrics, emit_report
from .moco import pretrain
from .nifti import load_nifti, save_nifti
from .preprocess import run_pipeline
from .synth import generate_dataset, scan_external_dir


class RunLogger:
    """Mirrors JSON event lines to stdout and ``<out>/log.jsonl``."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / "log.jsonl"

    def emit(self, **fields) -> None:
        line = json.dumps(fields, sort_keys=True)
        print(line)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cogfatigue", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cogfatigue {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, data: bool = False) -> None:
        p.add_argument("--config", type=Path, default=None, help="INI-style config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config value (repeatable)",
        )
        p.add_argument("--out", type=Path, required=True, help="run output directory")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--workers", type=int, default=None, help="parallel augmentation workers")
        if data:
            p.add_argument("--data", type=Path, required=True, help="dataset manifest (or scan directory)")

    common(sub.add_parser("synth", help="generate a labeled synthetic dataset"))
    common(sub.add_parser("preprocess", help="smooth + normalize every scan in a manifest"), data=True)

    p = sub.add_parser("augment-preview", help="write both augmented views of one scan")
    common(p)
    p.add_argument("--scan", type=Path, required=True, help="input NIfTI scan")

    p = sub.add_parser("pretrain", help="momentum-contrast pretraining")
    common(p, data=True)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint directory to resume from")

    p = sub.add_parser("finetune", help="supervised fine-tuning + test-split report")
    common(p, data=True)
    p.add_argument("--checkpoint", type=Path, default=None, help="pretraining checkpoint to start from")

    p = sub.add_parser("evaluate", help="evaluate a saved classifier on a manifest")
    common(p, data=True)
    p.add_argument("--model", type=Path, required=True, help="classifier checkpoint directory")

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    common(p, data=True)
    p.add_argument("--checkpoint", type=Path, default=None, help="pretraining checkpoint to start from")
    p.add_argument("--folds", type=int, default=3)

    p = sub.add_parser("report", help="regenerate report files from a metrics JSON")
    common(p)
    p.add_argument("--metrics", type=Path, required=True, help="metrics.json from a previous run")
    p.add_argument("--data", type=Path, default=None, help="manifest for the score histogram")

    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"run.workers={args.workers}")
    return apply_overrides(cfg, overrides)


def _start_run(args, cfg: RunConfig) -> RunLogger:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(format_config(cfg), encoding="utf-8")
    if cfg.run.torch_threads > 0:
        torch.set_num_threads(cfg.run.torch_threads)
    logger = RunLogger(out)
    logger.emit(event="run_start", command=args.command, seed=cfg.run.seed, out=str(out))
    return logger


def _load_index(path: Path) -> DatasetIndex:
    if not path.exists():
        raise ConfigError(f"--data path does not exist: {path}")
    return read_manifest(path)


def _require(path: Path | None, flag: str) -> Path:
    if path is None or not path.exists():
        raise ConfigError(f"{flag} path does not exist: {path}")
    return path


def _cmd_synth(args, cfg: RunConfig, logger: RunLogger) -> int:
    index = generate_dataset(cfg.synth, args.out / "dataset")
    logger.emit(event="synth_done", scans=len(index), manifest=str(args.out / "dataset" / "manifest.tsv"))
    return 0


def _cmd_preprocess(args, cfg: RunConfig, logger: RunLogger) -> int:
    index = _load_index(args.data)
    out_scans = args.out / "preprocessed"
    out_scans.mkdir(parents=True, exist_ok=True)
    records = []
    for rec in index.records:
        vs = run_pipeline(load_nifti(rec.path), cfg.preprocess)
        target = out_scans / rec.path.name
        save_nifti(vs, target)
        records.append(dataclasses.replace(rec, path=target))
    write_manifest(DatasetIndex.from_records(records), out_scans / "manifest.tsv")
    logger.emit(event="preprocess_done", scans=len(records), manifest=str(out_scans / "manifest.tsv"))
    return 0


def _cmd_augment_preview(args, cfg: RunConfig, logger: RunLogger) -> int:
    scan = _require(args.scan, "--scan")
    pair = make_view_pair(load_nifti(scan), cfg.augment, cfg.run.seed)
    save_nifti(pair.view_a, args.out / "view_a.nii")
    save_nifti(pair.view_b, args.out / "view_b.nii")
    logger.emit(event="augment_preview_done", seed_a=pair.seed_a, seed_b=pair.seed_b)
    return 0


def _pretrain_index(args, logger: RunLogger) -> DatasetIndex:
    if args.data.is_dir():
        index, skipped = scan_external_dir(args.data)
        if skipped:
            report = args.out / "skip_report.txt"
            report.write_text("\n".join(str(p) for p in skipped) + "\n", encoding="utf-8")
            print(f"warning: skipped {len(skipped)} malformed files (see {report})", file=sys.stderr)
        if len(index) == 0:
            print(f"warning: no usable scans found under {args.data}", file=sys.stderr)
        return index
    return _load_index(args.data)


def _cmd_pretrain(args, cfg: RunConfig, logger: RunLogger) -> int:
    index = _pretrain_index(args, logger)
    if args.resume is not None:
        _require(args.resume, "--resume")
    result = pretrain(
        index,
        cfg.encoder,
        cfg.pretrain,
        cfg.augment,
        args.out,
        seed=cfg.run.seed,
        resume=args.resume,
        n_jobs=cfg.run.workers,
        on_epoch=lambda entry: print(json.dumps({"event": "epoch", **entry}, sort_keys=True)),
    )
    logger.emit(event="pretrain_done", checkpoint=str(result.checkpoint_path), epochs=len(result.history))
    return 0


def _cmd_finetune(args, cfg: RunConfig, logger: RunLogger) -> int:
    index = _load_index(args.data)
    if args.checkpoint is not None:
        _require(args.checkpoint, "--checkpoint")
    split = make_splits(index, cfg.run.split_ratios, seed=cfg.run.seed)
    model, history = finetune(
        index,
        split,
        cfg=cfg.finetune,
        aug_cfg=cfg.augment,
        # a checkpoint carries its own encoder configuration
        encoder_cfg=None if args.checkpoint is not None else cfg.encoder,
        checkpoint=args.checkpoint,
        seed=cfg.run.seed,
    )
    ckpt = model.save(args.out / "checkpoints" / "classifier")
    fingerprint = config_fingerprint(cfg.finetune, cfg.augment, cfg.encoder)
    metrics = evaluate(model, index.subset(split.test), config_hash=fingerprint, seed=cfg.run.seed)
    emit_report(metrics, history, args.out / "reports", records=index.records)
    logger.emit(
        event="finetune_done",
        checkpoint=str(ckpt),
        test_overall_acc=metrics.overall_acc,
        epochs=len(history),
        pretrained=args.checkpoint is not None,
    )
    return 0


def _cmd_evaluate(args, cfg: RunConfig, logger: RunLogger) -> int:
    model_path = _require(args.model, "--model")
    index = _load_index(args.data)
    model = ClassifierModel.load(model_path)
    metrics = evaluate(model, list(index.records), seed=cfg.run.seed)
    emit_report(metrics, [], args.out / "reports", records=index.records)
    logger.emit(event="evaluate_done", overall_acc=metrics.overall_acc, n=metrics.n)
    return 0


def _cmd_crossval(args, cfg: RunConfig, logger: RunLogger) -> int:
    index = _load_index(args.data)
    if args.checkpoint is not None:
        _require(args.checkpoint, "--checkpoint")
    result = cross_validate(
        index,
        args.folds,
        cfg=cfg.finetune,
        aug_cfg=cfg.augment,
        encoder_cfg=None if args.checkpoint is not None else cfg.encoder,
        checkpoint=args.checkpoint,
        seed=cfg.run.seed,
    )
    reports = args.out / "reports"
    for i, fold_metrics in enumerate(result.per_fold):
        emit_report(fold_metrics, [], reports / f"fold_{i}")
    summary = {
        "mean_acc": result.mean_acc,
        "std_acc": result.std_acc,
        "summary": result.summary,
        "folds": args.folds,
    }
    reports.mkdir(parents=True, exist_ok=True)
    (reports / "crossval.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.emit(event="crossval_done", **summary)
    return 0


def _cmd_report(args, cfg: RunConfig, logger: RunLogger) -> int:
    metrics_path = _require(args.metrics, "--metrics")
    doc = json.loads(metrics_path.read_text(encoding="utf-8"))
    metrics = Metrics(
        overall_acc=doc["overall_acc"],
        hc_acc=doc.get("hc_acc"),
        tbi_acc=doc.get("tbi_acc"),
        confusion=np.asarray(doc["confusion"]),
        n=doc["n"],
        config_hash=doc.get("config_hash"),
        seed=doc.get("seed"),
    )
    records: list[ScanRecord] | None = None
    if args.data is not None:
        records = list(_load_index(args.data).records)
    written = emit_report(metrics, [], args.out / "reports", records=records)
    logger.emit(event="report_done", files=sorted(str(p) for p in written.values()))
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "augment-preview": _cmd_augment_preview,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "crossval": _cmd_crossval,
    "report": _cmd_report,
}


def run(argv: list[str]) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        logger = _start_run(args, cfg)
        return _HANDLERS[args.command](args, cfg, logger)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CogFatigueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
