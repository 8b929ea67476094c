"""Domain records, fatigue-score binning, dataset manifests, and splits."""

from __future__ import annotations

import hashlib
import math
import os
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import RangeError, SizeError, ValidationError
from .seeding import derive_seed


class FatigueClass(IntEnum):
    NO_FATIGUE = 0
    VERY_LOW = 1
    MILD = 2
    FATIGUE = 3
    HIGH = 4
    EXTREME = 5


class Group(str, Enum):
    HC = "HC"
    TBI = "TBI"


class Task(str, Enum):
    ZERO_BACK = "0back"
    TWO_BACK = "2back"


# Lower edges of classes 1..5; intervals are half-open [lo, hi) except the
# last, which includes 100.
_CLASS_EDGES = (10.0, 20.0, 40.0, 60.0, 80.0)

#: (low, high) score interval for each class, low-inclusive.
CLASS_SCORE_BINS = ((0.0, 10.0), (10.0, 20.0), (20.0, 40.0), (40.0, 60.0), (60.0, 80.0), (80.0, 100.0))


def score_to_class(score: float) -> FatigueClass:
    """Bin a self-reported 0-100 fatigue score into one of six classes.

    Boundaries are lower-inclusive (a score of exactly 10 is class 1);
    100 belongs to the top class.
    """
    if not (0.0 <= score <= 100.0):
        raise RangeError(f"score must be in [0, 100], got {score!r}")
    return FatigueClass(bisect_right(_CLASS_EDGES, float(score)))


@dataclass(frozen=True)
class ScanRecord:
    """One acquisition: a scan file plus its subject/session metadata.

    ``sr_score``/``label``/``group``/``task`` are None for unlabeled scans
    (external pretraining data).  When a score is present its label must
    agree with :func:`score_to_class`.
    """

    path: Path
    subject_id: str
    group: Group | None = None
    task: Task | None = None
    session_index: int = 0
    sr_score: float | None = None
    label: FatigueClass | None = None

    def __post_init__(self) -> None:
        if self.session_index < 0:
            raise ValidationError(f"session_index must be >= 0, got {self.session_index}")
        if self.sr_score is not None:
            expected = score_to_class(self.sr_score)
            if self.label != expected:
                raise ValidationError(
                    f"label {self.label} does not match score {self.sr_score} (expected {expected})"
                )
        elif self.label is not None:
            raise ValidationError("label requires an sr_score")

    @classmethod
    def labeled(
        cls,
        path: Path | str,
        subject_id: str,
        group: Group,
        task: Task,
        session_index: int,
        sr_score: float,
    ) -> "ScanRecord":
        return cls(
            path=Path(path),
            subject_id=subject_id,
            group=group,
            task=task,
            session_index=session_index,
            sr_score=float(sr_score),
            label=score_to_class(sr_score),
        )

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.subject_id, self.session_index, self.task.value if self.task else "")


def _manifest_line(rec: ScanRecord) -> str:
    return "\t".join(
        [
            str(rec.path),
            rec.subject_id,
            rec.group.value if rec.group else "-",
            rec.task.value if rec.task else "-",
            str(rec.session_index),
            repr(rec.sr_score) if rec.sr_score is not None else "-",
        ]
    )


@dataclass(frozen=True)
class DatasetIndex:
    """An immutable, checksummed listing of scan records."""

    records: tuple[ScanRecord, ...]
    checksum: str

    @classmethod
    def from_records(cls, records: Iterable[ScanRecord]) -> "DatasetIndex":
        records = tuple(records)
        seen: set[tuple[str, int, str]] = set()
        for rec in records:
            if rec.key in seen:
                raise ValidationError(f"duplicate record key {rec.key}")
            seen.add(rec.key)
        body = "\n".join(_manifest_line(r) for r in records)
        checksum = hashlib.sha256(body.encode("utf-8")).hexdigest()
        return cls(records=records, checksum=checksum)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, ids: Sequence[int]) -> list[ScanRecord]:
        return [self.records[i] for i in ids]


def _stored_path(path: Path, base: Path) -> str:
    """Scan path as written to a manifest living in ``base``.

    Relative inputs are interpreted against the CWD (that is what the
    caller meant) and rebased onto the manifest directory, keeping
    manifests portable; paths outside it are stored absolute.  Absolute
    inputs are kept verbatim.
    """
    if path.is_absolute():
        return str(path)
    resolved = Path(os.path.abspath(path))
    try:
        return str(resolved.relative_to(Path(os.path.abspath(base))))
    except ValueError:
        return str(resolved)


def write_manifest(index: DatasetIndex, path: str | Path) -> None:
    """Write the tab-separated manifest (one record per line, '#' comments)."""
    path = Path(path)
    lines = ["# path\tsubject_id\tgroup\ttask\tsession_index\tsr_score"]
    for rec in index.records:
        fields = _manifest_line(rec).split("\t")
        fields[0] = _stored_path(rec.path, path.parent)
        lines.append("\t".join(fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetIndex:
    """Load a manifest; relative scan paths resolve against its directory."""
    path = Path(path)
    base = Path(os.path.abspath(path)).parent
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ValidationError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
        raw_path, subject, group, task, session, score = parts
        scan_path = Path(raw_path)
        if not scan_path.is_absolute():
            scan_path = base / scan_path
        sr_score = None if score == "-" else float(score)
        records.append(
            ScanRecord(
                path=scan_path,
                subject_id=subject,
                group=None if group == "-" else Group(group),
                task=None if task == "-" else Task(task),
                session_index=int(session),
                sr_score=sr_score,
                label=None if sr_score is None else score_to_class(sr_score),
            )
        )
    return DatasetIndex.from_records(records)


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/val/test index lists covering a whole DatasetIndex."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def __post_init__(self) -> None:
        all_ids = list(self.train) + list(self.val) + list(self.test)
        if len(set(all_ids)) != len(all_ids):
            raise ValidationError("split lists overlap")


def _floor_count(ratio: float, n: int) -> int:
    # epsilon guards against 0.15 * 100 == 14.999999999999998-style artifacts
    return int(math.floor(ratio * n + 1e-9))


def make_splits(
    index: DatasetIndex,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
    by_subject: bool = False,
) -> SplitSpec:
    """Randomly partition records into train/val/test.

    Sizes follow ``n_test = floor(test * N)``, ``n_val = floor(val * N)``,
    remainder to train.  With ``by_subject`` whole subjects are assigned to
    one side, so sizes are only approximate.
    """
    n = len(index)
    if any(r <= 0 for r in ratios):
        raise RangeError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise RangeError(f"ratios must sum to 1, got {sum(ratios)!r}")
    if n < 3:
        raise SizeError(f"need at least 3 records, got {n}")

    n_test = _floor_count(ratios[2], n)
    n_val = _floor_count(ratios[1], n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise SizeError(f"dataset of {n} records too small for non-empty splits with ratios {ratios}")

    rng = np.random.default_rng(seed)
    if not by_subject:
        perm = rng.permutation(n)
        train = perm[:n_train]
        val = perm[n_train : n_train + n_val]
        test = perm[n_train + n_val :]
    else:
        subjects: dict[str, list[int]] = {}
        for i, rec in enumerate(index.records):
            subjects.setdefault(rec.subject_id, []).append(i)
        order = rng.permutation(sorted(subjects))
        train_l, val_l, test_l = [], [], []
        for subj in order:
            ids = subjects[subj]
            if len(test_l) < n_test:
                test_l += ids
            elif len(val_l) < n_val:
                val_l += ids
            else:
                train_l += ids
        if not train_l or not val_l or not test_l:
            raise SizeError("too few subjects for non-empty by-subject splits")
        train, val, test = np.array(train_l), np.array(val_l), np.array(test_l)

    return SplitSpec(
        train=tuple(int(i) for i in train),
        val=tuple(int(i) for i in val),
        test=tuple(int(i) for i in test),
        seed=seed,
    )


# Fraction of each fold's non-test records that goes to training.
KFOLD_TRAIN_FRACTION = 0.82


def make_kfold(index: DatasetIndex, k: int, seed: int = 0) -> list[SplitSpec]:
    """Build k folds whose test sets partition the index.

    Test-fold sizes differ by at most one; within each fold the remaining
    records are split 82/18 into train/val.
    """
    n = len(index)
    if k < 2:
        raise RangeError(f"k must be >= 2, got {k}")
    if k > n:
        raise SizeError(f"k={k} exceeds dataset size {n}")

    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    specs = []
    for i, test in enumerate(folds):
        rest = np.concatenate([f for j, f in enumerate(folds) if j != i])
        rest = rest[np.random.default_rng(derive_seed(seed, "fold", i)).permutation(len(rest))]
        n_val = len(rest) - _floor_count(KFOLD_TRAIN_FRACTION, len(rest))
        specs.append(
            SplitSpec(
                train=tuple(int(x) for x in rest[n_val:]),
                val=tuple(int(x) for x in rest[:n_val]),
                test=tuple(int(x) for x in test),
                seed=derive_seed(seed, "fold", i),
            )
        )
    return specs
