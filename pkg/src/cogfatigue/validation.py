"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError, SizeError, ValidationError
from .metrics import N_CLASSES
from .volume import VolumeSeries


def check_volume_list(X, allow_single: bool = True) -> list[VolumeSeries]:
    """Coerce ``X`` to a list of :class:`VolumeSeries`, validating each item."""
    if isinstance(X, VolumeSeries):
        if not allow_single:
            raise ValidationError("expected a sequence of VolumeSeries")
        return [X]
    items = list(X)
    if not items:
        raise SizeError("empty scan list")
    for i, item in enumerate(items):
        if not isinstance(item, VolumeSeries):
            raise ValidationError(f"item {i} is {type(item).__name__}, expected VolumeSeries")
    return items


def check_same_geometry(scans: Sequence[VolumeSeries]) -> tuple[int, int, int]:
    """All scans must share spatial dims; returns (Z, Y, X)."""
    spatial = scans[0].data.shape[1:]
    for i, vs in enumerate(scans):
        if vs.data.shape[1:] != spatial:
            raise ShapeError(
                f"scan {i} has spatial dims {vs.data.shape[1:]}, expected {spatial}"
            )
    return spatial  # type: ignore[return-value]


def check_class_labels(y, n: int) -> np.ndarray:
    """Validate integer class labels in 0..5 matching the scan count."""
    labels = np.asarray(list(y))
    if labels.shape != (n,):
        raise ValidationError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (
        not np.issubdtype(labels.dtype, np.integer)
        and not np.all(labels == labels.astype(np.int64))
    ):
        raise ValidationError("labels must be integers")
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise ValidationError(f"labels must be in 0..{N_CLASSES - 1}")
    return labels
