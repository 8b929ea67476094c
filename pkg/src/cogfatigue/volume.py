"""The 4D scan payload passed between pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError, ValidationError


def _identity_affine() -> np.ndarray:
    return np.eye(4, dtype=np.float64)


@dataclass
class VolumeSeries:
    """A 4D acquisition: ``data[t, z, y, x]`` plus voxel geometry.

    ``data`` is always float32.  ``voxel_dims_mm`` is ordered ``(dz, dy, dx)``
    to match the axis order of ``data``; ``tr_seconds`` is the interval
    between successive volumes.
    """

    data: np.ndarray
    voxel_dims_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    tr_seconds: float = 1.0
    affine: np.ndarray = field(default_factory=_identity_affine)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ShapeError(f"expected 4D (t, z, y, x) data, got ndim={self.data.ndim}")
        if any(s < 1 for s in self.data.shape):
            raise ShapeError(f"all dims must be >= 1, got shape {self.data.shape}")
        self.voxel_dims_mm = tuple(float(v) for v in self.voxel_dims_mm)
        if len(self.voxel_dims_mm) != 3 or any(v <= 0 for v in self.voxel_dims_mm):
            raise ValidationError(f"voxel_dims_mm must be 3 positive reals, got {self.voxel_dims_mm}")
        if not self.tr_seconds > 0:
            raise ValidationError(f"tr_seconds must be positive, got {self.tr_seconds}")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ShapeError(f"affine must be 4x4, got {self.affine.shape}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def n_timepoints(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray) -> "VolumeSeries":
        """A copy of this series carrying new voxel data, same geometry."""
        return replace(self, data=data, affine=self.affine.copy())

    def check_finite(self) -> None:
        """Raise if any voxel is NaN or infinite."""
        bad = int(np.count_nonzero(~np.isfinite(self.data)))
        if bad:
            raise ValidationError(f"volume contains {bad} non-finite voxels")
