"""Scan conditioning: Gaussian smoothing, temporal z-normalization, clipping.

A deliberately small stand-in for a full neuroimaging preprocessing stack:
enough to turn raw intensities into normalized, smoothed series without any
external toolchain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import RangeError, ShapeError
from .volume import VolumeSeries

#: FWHM of a Gaussian = 2*sqrt(2*ln 2) sigma.
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class PreprocessConfig:
    smooth_fwhm_mm: float = 6.0
    znorm: bool = True
    clamp_sigma: float = 0.0  # 0 disables clipping

    def __post_init__(self) -> None:
        if self.smooth_fwhm_mm < 0:
            raise RangeError(f"smooth_fwhm_mm must be >= 0, got {self.smooth_fwhm_mm}")
        if self.clamp_sigma < 0:
            raise RangeError(f"clamp_sigma must be >= 0, got {self.clamp_sigma}")


def znorm_array(data: np.ndarray) -> np.ndarray:
    """Per-voxel temporal z-score (population std); zero-variance voxels -> 0.

    Accepts T == 1 (everything is zero-variance then).  Returns float32.
    """
    x = data.astype(np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    out = np.zeros_like(x)
    np.divide(x - mean, std, out=out, where=std > 0)
    return out.astype(np.float32)


def temporal_znorm(vs: VolumeSeries) -> VolumeSeries:
    """Normalize each voxel's time series to mean 0, population std 1."""
    if vs.n_timepoints < 2:
        raise ShapeError(f"temporal_znorm needs T >= 2, got T={vs.n_timepoints}")
    return vs.with_data(znorm_array(vs.data))


def spatial_smooth(vs: VolumeSeries, fwhm_mm: float) -> VolumeSeries:
    """3D Gaussian smoothing of every timepoint, reflective boundaries.

    The kernel width is isotropic in millimetres: per axis,
    ``sigma_voxels = (fwhm_mm / FWHM_PER_SIGMA) / voxel_dim_mm``.
    ``fwhm_mm == 0`` is the identity.
    """
    if fwhm_mm < 0:
        raise RangeError(f"fwhm_mm must be >= 0, got {fwhm_mm}")
    if fwhm_mm == 0:
        return vs.with_data(vs.data.copy())
    sigma_mm = fwhm_mm / FWHM_PER_SIGMA
    sigmas = (0.0,) + tuple(sigma_mm / d for d in vs.voxel_dims_mm)
    smoothed = ndimage.gaussian_filter(vs.data.astype(np.float64), sigma=sigmas, mode="reflect")
    return vs.with_data(smoothed.astype(np.float32))


def run_pipeline(vs: VolumeSeries, cfg: PreprocessConfig) -> VolumeSeries:
    """Smooth, then z-normalize, then clip to ``+-clamp_sigma`` (fixed order)."""
    out = spatial_smooth(vs, cfg.smooth_fwhm_mm)
    if cfg.znorm:
        out = temporal_znorm(out)
    if cfg.clamp_sigma > 0:
        out = out.with_data(np.clip(out.data, -cfg.clamp_sigma, cfg.clamp_sigma))
    return out


class Preprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`run_pipeline`.

    Accepts a single :class:`VolumeSeries` or a list of them; ``fit`` is a
    no-op so the step drops into sklearn pipelines.
    """

    def __init__(self, smooth_fwhm_mm: float = 6.0, znorm: bool = True, clamp_sigma: float = 0.0):
        self.smooth_fwhm_mm = smooth_fwhm_mm
        self.znorm = znorm
        self.clamp_sigma = clamp_sigma

    def _config(self) -> PreprocessConfig:
        return PreprocessConfig(
            smooth_fwhm_mm=self.smooth_fwhm_mm, znorm=self.znorm, clamp_sigma=self.clamp_sigma
        )

    def fit(self, X, y=None):
        self._config()  # validates parameters
        return self

    def transform(self, X):
        from .validation import check_volume_list

        cfg = self._config()
        if isinstance(X, VolumeSeries):
            return run_pipeline(X, cfg)
        return [run_pipeline(vs, cfg) for vs in check_volume_list(X)]
