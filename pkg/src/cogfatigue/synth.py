"""Synthetic labeled 4D datasets with a planted, class-graded signal.

Each scan is Gaussian background noise plus a spherical region whose time
series is a sinusoid; the sinusoid amplitude grows linearly with the class
label, so temporal-variance features separate the classes by construction.
A nearest-template oracle on that feature gives the floor any learned
model must beat, and a directory scanner ingests external NIfTI corpora
for unlabeled pretraining.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    CLASS_SCORE_BINS,
    DatasetIndex,
    FatigueClass,
    Group,
    ScanRecord,
    Task,
    write_manifest,
)
from .errors import FormatError, ShapeError, SizeError, ValidationError
from .nifti import load_nifti, read_header, save_nifti
from .seeding import rng_for
from .volume import VolumeSeries

#: Scanner-like geometry for generated volumes.
SYNTH_TR_SECONDS = 2.0
SYNTH_VOXEL_DIMS_MM = (4.0, 3.438, 3.438)
#: Period of the planted activation sinusoid, in volumes.
ROI_PERIOD_VOLUMES = 10


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 2
    shape: tuple[int, int, int, int] = (40, 16, 32, 32)
    roi_center: tuple[int, int, int] | None = None  # defaults to the volume center
    roi_radius_vox: float = 5.0
    base_amplitude: float = 0.5
    amplitude_step: float = 0.5
    noise_sigma: float = 0.2
    drift_period_s: float = 60.0
    hc_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_per_class < 1:
            raise ValidationError(f"n_per_class must be >= 1, got {self.n_per_class}")
        if len(self.shape) != 4 or any(s < 1 for s in self.shape):
            raise ValidationError(f"shape must be 4 positive ints, got {self.shape}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.hc_fraction <= 1.0:
            raise ValidationError(f"hc_fraction must be in [0, 1], got {self.hc_fraction}")
        center = self.center
        spatial = self.shape[1:]
        if any(not 0 <= c < s for c, s in zip(center, spatial)):
            raise ValidationError(f"roi_center {center} outside volume {spatial}")
        if self.roi_radius_vox <= 0 or any(
            c - self.roi_radius_vox < -0.5 or c + self.roi_radius_vox > s - 0.5
            for c, s in zip(center, spatial)
        ):
            raise ValidationError("ROI sphere must lie inside the volume")

    @property
    def center(self) -> tuple[int, int, int]:
        if self.roi_center is not None:
            return self.roi_center
        return tuple(s // 2 for s in self.shape[1:])


def roi_mask(spec: SynthSpec) -> np.ndarray:
    """Boolean (Z, Y, X) mask of the planted spherical region."""
    zz, yy, xx = np.ogrid[: spec.shape[1], : spec.shape[2], : spec.shape[3]]
    cz, cy, cx = spec.center
    dist2 = (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2
    return dist2 <= spec.roi_radius_vox**2


def class_amplitude(spec: SynthSpec, label: int) -> float:
    return spec.base_amplitude + label * spec.amplitude_step


def _synth_scan(spec: SynthSpec, label: int, item: int, mask: np.ndarray) -> tuple[VolumeSeries, float]:
    rng = rng_for(spec.seed, "scan", label, item)
    lo, hi = CLASS_SCORE_BINS[label]
    sr_score = lo + (hi - lo) * float(rng.random())
    if label < 5 and sr_score >= hi:
        sr_score = float(np.nextafter(hi, lo))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    drift_phase = float(rng.uniform(0.0, 2.0 * math.pi))

    t = np.arange(spec.shape[0], dtype=np.float64)
    data = np.zeros(spec.shape, dtype=np.float64)
    if spec.noise_sigma > 0:
        data += spec.noise_sigma * rng.standard_normal(spec.shape)
        drift = spec.noise_sigma * np.sin(2.0 * math.pi * t * SYNTH_TR_SECONDS / spec.drift_period_s + drift_phase)
        data += drift[:, None, None, None]
    signal = class_amplitude(spec, label) * np.sin(2.0 * math.pi * t / ROI_PERIOD_VOLUMES + phase)
    data[:, mask] += signal[:, None]

    vs = VolumeSeries(
        data=data.astype(np.float32),
        voxel_dims_mm=SYNTH_VOXEL_DIMS_MM,
        tr_seconds=SYNTH_TR_SECONDS,
    )
    return vs, sr_score


def generate_dataset(spec: SynthSpec, out_dir: str | Path) -> DatasetIndex:
    """Write ``6 * n_per_class`` scans plus a manifest; returns the index.

    Same spec (including seed) reproduces byte-identical files.  Scores are
    drawn inside each class's bin so the manifest round-trips through the
    score-to-class mapping.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask = roi_mask(spec)
    n_hc = int(round(spec.n_per_class * spec.hc_fraction))

    records = []
    for label in range(len(FatigueClass)):
        for item in range(spec.n_per_class):
            vs, sr_score = _synth_scan(spec, label, item, mask)
            path = out_dir / f"scan_c{label}_{item:03d}.nii"
            save_nifti(vs, path)
            records.append(
                ScanRecord.labeled(
                    path=path,
                    subject_id=f"synth-c{label}-{item:03d}",
                    group=Group.HC if item < n_hc else Group.TBI,
                    task=Task.ZERO_BACK if item % 2 == 0 else Task.TWO_BACK,
                    session_index=item,
                    sr_score=sr_score,
                )
            )
    index = DatasetIndex.from_records(records)
    write_manifest(index, out_dir / "manifest.tsv")
    return index


def roi_std_feature(data: np.ndarray, top_fraction: float = 0.01) -> float:
    """Mean temporal std over the most temporally variable voxels.

    Scale-covariant: multiplying the scan by a positive constant scales the
    feature by the same constant, so nearest-template classification is
    invariant to global intensity scaling.
    """
    stds = data.astype(np.float64).std(axis=0).ravel()
    k = max(1, int(math.ceil(top_fraction * stds.size)))
    return float(np.partition(stds, -k)[-k:].mean())


def baseline_oracle(index: DatasetIndex, top_fraction: float = 0.01) -> float:
    """Held-out accuracy of a nearest-class-template variance classifier.

    Per class, the first half of the records (index order) estimates the
    class template; the second half is scored against the nearest template.
    This is the floor a learned model must beat.
    """
    by_class: dict[int, list[ScanRecord]] = {}
    for rec in index.records:
        if rec.label is None:
            raise ValidationError("baseline oracle needs labeled records")
        by_class.setdefault(int(rec.label), []).append(rec)
    for label, recs in sorted(by_class.items()):
        if len(recs) < 2:
            raise SizeError(f"class {label} has {len(recs)} records; need >= 2 for held-in/held-out halves")

    features = {rec.path: roi_std_feature(load_nifti(rec.path).data, top_fraction) for rec in index.records}
    templates = {}
    held_out: list[tuple[float, int]] = []
    for label, recs in sorted(by_class.items()):
        half = (len(recs) + 1) // 2
        templates[label] = float(np.mean([features[r.path] for r in recs[:half]]))
        held_out += [(features[r.path], label) for r in recs[half:]]

    labels = sorted(templates)
    values = np.asarray([templates[c] for c in labels])
    correct = sum(1 for feat, label in held_out if labels[int(np.argmin(np.abs(values - feat)))] == label)
    return correct / len(held_out)


def scan_external_dir(
    directory: str | Path, pattern: str = "*.nii*"
) -> tuple[DatasetIndex, list[Path]]:
    """Index a directory of 4D NIfTI files as unlabeled pretraining records.

    Headers are validated (magic, 4D shape) without reading voxel data;
    malformed files land in the returned skip list.  An empty match yields
    an empty index, which callers should surface as a warning.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    records = []
    skipped: list[Path] = []
    for path in sorted(directory.rglob(pattern)):
        if not path.is_file():
            continue
        try:
            hdr = read_header(path)
            dim = hdr["dim"]
            if dim[0] != 4 or min(dim[1:5]) < 1:
                raise ShapeError(f"{path}: not a 4D volume")
        except (FormatError, ShapeError, OSError):
            skipped.append(path)
            continue
        records.append(ScanRecord(path=path, subject_id=str(path.relative_to(directory))))
    return DatasetIndex.from_records(records), skipped
