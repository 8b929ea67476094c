"""Accuracy metrics, confusion matrices, and report files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FatigueClass, Group, ScanRecord
from .errors import SizeError, ValidationError

N_CLASSES = len(FatigueClass)


@dataclass
class Metrics:
    """Overall and per-group accuracy plus a (true, predicted) count matrix."""

    overall_acc: float
    hc_acc: float | None
    tbi_acc: float | None
    confusion: np.ndarray
    n: int
    config_hash: str | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        if self.confusion.shape != (N_CLASSES, N_CLASSES):
            raise ValidationError(f"confusion must be {N_CLASSES}x{N_CLASSES}, got {self.confusion.shape}")
        if int(self.confusion.sum()) != self.n:
            raise ValidationError(f"confusion entries sum to {self.confusion.sum()}, expected n={self.n}")

    def to_dict(self) -> dict:
        doc: dict = {
            "overall_acc": self.overall_acc,
            "n": self.n,
            "confusion": self.confusion.tolist(),
            "config_hash": self.config_hash,
            "seed": self.seed,
        }
        if self.hc_acc is not None:
            doc["hc_acc"] = self.hc_acc
        if self.tbi_acc is not None:
            doc["tbi_acc"] = self.tbi_acc
        return doc


def evaluate_predictions(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    groups: Sequence[Group | None] | None = None,
    config_hash: str | None = None,
    seed: int | None = None,
) -> Metrics:
    """Build :class:`Metrics` from parallel truth/prediction lists.

    Group-conditional accuracies are reported only for groups present in
    the data; rows of the confusion matrix are true classes.
    """
    if len(y_true) == 0:
        raise SizeError("cannot evaluate zero predictions")
    if len(y_true) != len(y_pred):
        raise ValidationError(f"{len(y_true)} truths vs {len(y_pred)} predictions")
    true = np.asarray([int(v) for v in y_true])
    pred = np.asarray([int(v) for v in y_pred])
    if true.min() < 0 or true.max() >= N_CLASSES or pred.min() < 0 or pred.max() >= N_CLASSES:
        raise ValidationError("class values must be in 0..5")

    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    correct = true == pred

    def group_acc(group: Group) -> float | None:
        if groups is None:
            return None
        mask = np.asarray([g == group for g in groups])
        if not mask.any():
            return None
        return float(correct[mask].mean())

    return Metrics(
        overall_acc=float(np.trace(confusion)) / len(true),
        hc_acc=group_acc(Group.HC),
        tbi_acc=group_acc(Group.TBI),
        confusion=confusion,
        n=len(true),
        config_hash=config_hash,
        seed=seed,
    )


def format_mean_std(mean: float, std: float) -> str:
    """Accuracy summary as percentages: ``86.84 ± 1.13``."""
    return f"{mean * 100:.2f} ± {std * 100:.2f}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join("" if v is None else str(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_report(
    metrics: Metrics,
    history: Sequence[dict],
    out_dir: str | Path,
    records: Sequence[ScanRecord] | None = None,
) -> dict[str, Path]:
    """Write metrics JSON, confusion CSV, optional curve and histogram CSVs.

    Outputs are byte-deterministic for identical inputs.  The training
    curve is skipped for empty histories; the per-group score histogram
    needs labeled ``records``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written["metrics"] = metrics_path

    confusion_path = out_dir / "confusion_matrix.csv"
    header = ["true_class"] + [f"pred_{c}" for c in range(N_CLASSES)]
    rows = [[c] + metrics.confusion[c].tolist() for c in range(N_CLASSES)]
    _write_csv(confusion_path, header, rows)
    written["confusion"] = confusion_path

    if history:
        curve_path = out_dir / "training_curve.csv"
        keys = ["epoch", "train_loss", "train_acc", "val_acc"]
        _write_csv(curve_path, keys, [[entry.get(k) for k in keys] for entry in history])
        written["curve"] = curve_path

    if records is not None:
        labeled = [r for r in records if r.label is not None]
        if labeled:
            hist_path = out_dir / "score_histogram.csv"
            counts = {g: [0] * N_CLASSES for g in (Group.HC, Group.TBI)}
            for rec in labeled:
                if rec.group is not None:
                    counts[rec.group][int(rec.label)] += 1
            rows = [[c, counts[Group.HC][c], counts[Group.TBI][c]] for c in range(N_CLASSES)]
            _write_csv(hist_path, ["class", "hc_count", "tbi_count"], rows)
            written["histogram"] = hist_path

    return written
