"""Seeded two-view augmentation for contrastive pretraining.

Every transform is a pure function of ``(input, config, seed)``: the random
plan is drawn first (:func:`make_plan`), then applied.  That keeps batch
construction reproducible and safe to parallelize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ShapeError, ValidationError
from .preprocess import znorm_array
from .seeding import derive_seed, rng_for
from .volume import VolumeSeries

BRANCHES = ("blur", "gamma", "motion", "noise")


def _check_range(name: str, rng: tuple[float, float]) -> tuple[float, float]:
    lo, hi = (float(rng[0]), float(rng[1]))
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValidationError(f"{name} must be a finite (lo, hi) pair with lo <= hi, got {rng}")
    return lo, hi


@dataclass(frozen=True)
class AugmentConfig:
    crop_len: int = 16
    affine_max_deg: float = 10.0
    affine_max_translate_vox: float = 4.0
    affine_max_scale_delta: float = 0.1
    intensity_rescale_range: tuple[float, float] = (0.5, 99.5)
    blur_sigma_range: tuple[float, float] = (0.25, 1.5)
    gamma_log_range: tuple[float, float] = (-0.3, 0.3)
    noise_sigma_range: tuple[float, float] = (0.01, 0.1)
    motion_max_transforms: int = 2

    def __post_init__(self) -> None:
        if self.crop_len < 1:
            raise ValidationError(f"crop_len must be >= 1, got {self.crop_len}")
        if self.motion_max_transforms < 1:
            raise ValidationError(f"motion_max_transforms must be >= 1, got {self.motion_max_transforms}")
        for name in ("affine_max_deg", "affine_max_translate_vox", "affine_max_scale_delta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
        _check_range("intensity_rescale_range", self.intensity_rescale_range)
        _check_range("blur_sigma_range", self.blur_sigma_range)
        _check_range("gamma_log_range", self.gamma_log_range)
        _check_range("noise_sigma_range", self.noise_sigma_range)


@dataclass(frozen=True)
class MotionEvent:
    t: int
    rotate_deg: tuple[float, float, float]
    translate_vox: tuple[float, float, float]


@dataclass(frozen=True)
class AugmentPlan:
    """Concrete draw of all random augmentation parameters for one view."""

    rotate_deg: tuple[float, float, float]
    translate_vox: tuple[float, float, float]
    scale: tuple[float, float, float]
    branch: str
    blur_sigma: float = 0.0
    gamma_exp: float = 1.0
    noise_sigma: float = 0.0
    noise_seed: int = 0
    motion: tuple[MotionEvent, ...] = field(default_factory=tuple)

    @property
    def affine_is_identity(self) -> bool:
        return (
            all(r == 0.0 for r in self.rotate_deg)
            and all(t == 0.0 for t in self.translate_vox)
            and all(s == 1.0 for s in self.scale)
        )


def make_plan(n_timepoints: int, cfg: AugmentConfig, seed: int) -> AugmentPlan:
    """Draw the augmentation plan (affine + one-of-four branch) for a seed."""
    rng = rng_for(seed, "plan")

    def draw3(lo: float, hi: float) -> tuple[float, float, float]:
        return tuple(float(v) for v in rng.uniform(lo, hi, 3))

    rot = draw3(-cfg.affine_max_deg, cfg.affine_max_deg)
    trans = draw3(-cfg.affine_max_translate_vox, cfg.affine_max_translate_vox)
    scale = draw3(1.0 - cfg.affine_max_scale_delta, 1.0 + cfg.affine_max_scale_delta)
    branch = BRANCHES[int(rng.integers(len(BRANCHES)))]

    kwargs: dict = {}
    if branch == "blur":
        kwargs["blur_sigma"] = float(rng.uniform(*cfg.blur_sigma_range))
    elif branch == "gamma":
        kwargs["gamma_exp"] = float(math.exp(rng.uniform(*cfg.gamma_log_range)))
    elif branch == "noise":
        kwargs["noise_sigma"] = float(rng.uniform(*cfg.noise_sigma_range))
        kwargs["noise_seed"] = derive_seed(seed, "noise")
    else:
        count = int(rng.integers(1, cfg.motion_max_transforms + 1))
        count = min(count, n_timepoints)
        times = sorted(int(t) for t in rng.choice(n_timepoints, size=count, replace=False))
        events = []
        for t in times:
            r = draw3(-cfg.affine_max_deg, cfg.affine_max_deg)
            tv = draw3(-cfg.affine_max_translate_vox, cfg.affine_max_translate_vox)
            events.append(MotionEvent(t=t, rotate_deg=r, translate_vox=tv))
        kwargs["motion"] = tuple(events)

    return AugmentPlan(rotate_deg=rot, translate_vox=trans, scale=scale, branch=branch, **kwargs)


def _rotation_matrix(rotate_deg: tuple[float, float, float]) -> np.ndarray:
    # Axes order (z, y, x); each angle rotates the plane orthogonal to one axis.
    az, ay, ax = (math.radians(a) for a in rotate_deg)
    cz, sz = math.cos(az), math.sin(az)
    cy, sy = math.cos(ay), math.sin(ay)
    cx, sx = math.cos(ax), math.sin(ax)
    rz = np.array([[1, 0, 0], [0, cz, -sz], [0, sz, cz]])
    ry = np.array([[cy, 0, -sy], [0, 1, 0], [sy, 0, cy]])
    rx = np.array([[cx, -sx, 0], [sx, cx, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _resample_volume(
    vol: np.ndarray,
    rotate_deg: tuple[float, float, float],
    translate_vox: tuple[float, float, float],
    scale: tuple[float, float, float],
) -> np.ndarray:
    """Apply rotate-scale-translate to one 3D volume, trilinear, zero-padded."""
    center = (np.array(vol.shape, dtype=np.float64) - 1.0) / 2.0
    fwd = _rotation_matrix(rotate_deg) @ np.diag(scale)
    inv = np.linalg.inv(fwd)
    offset = center - inv @ (center + np.asarray(translate_vox, dtype=np.float64))
    return ndimage.affine_transform(
        vol, inv, offset=offset, order=1, mode="constant", cval=0.0, prefilter=False
    )


def _apply_shared_affine(data: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    """One rigid+scale transform shared by all timepoints (4D in one call)."""
    center = (np.array(data.shape[1:], dtype=np.float64) - 1.0) / 2.0
    fwd = _rotation_matrix(plan.rotate_deg) @ np.diag(plan.scale)
    inv = np.linalg.inv(fwd)
    offset3 = center - inv @ (center + np.asarray(plan.translate_vox, dtype=np.float64))
    mat4 = np.eye(4)
    mat4[1:, 1:] = inv
    offset4 = np.concatenate([[0.0], offset3])
    return ndimage.affine_transform(
        data, mat4, offset=offset4, order=1, mode="constant", cval=0.0, prefilter=False
    )


def rescale_intensity(data: np.ndarray, pct_range: tuple[float, float]) -> np.ndarray:
    """Clip to a percentile window and min-max map it to [0, 1]."""
    lo, hi = np.percentile(data, pct_range)
    if hi <= lo:
        return np.zeros_like(data, dtype=np.float32)
    out = (np.clip(data, lo, hi) - lo) / (hi - lo)
    return out.astype(np.float32)


def apply_plan(vs: VolumeSeries, cfg: AugmentConfig, plan: AugmentPlan) -> VolumeSeries:
    """Run affine -> temporal z-norm -> intensity rescale -> one-of branch."""
    data = vs.data
    if not plan.affine_is_identity:
        data = _apply_shared_affine(data, plan).astype(np.float32)
    data = znorm_array(data)
    data = rescale_intensity(data, cfg.intensity_rescale_range)

    if plan.branch == "blur" and plan.blur_sigma > 0:
        s = plan.blur_sigma
        data = ndimage.gaussian_filter(data, sigma=(0.0, s, s, s), mode="reflect")
    elif plan.branch == "gamma" and plan.gamma_exp != 1.0:
        data = np.power(data, np.float32(plan.gamma_exp))
    elif plan.branch == "noise" and plan.noise_sigma > 0:
        noise = rng_for(plan.noise_seed).standard_normal(data.shape, dtype=np.float32)
        data = data + np.float32(plan.noise_sigma) * noise
    elif plan.branch == "motion":
        # rescale_intensity returned a fresh array; per-frame writes are safe
        for ev in plan.motion:
            if any(r != 0.0 for r in ev.rotate_deg) or any(t != 0.0 for t in ev.translate_vox):
                data[ev.t] = _resample_volume(data[ev.t], ev.rotate_deg, ev.translate_vox, (1.0, 1.0, 1.0))

    return vs.with_data(data.astype(np.float32))


def temporal_crop(vs: VolumeSeries, n: int, seed: int) -> VolumeSeries:
    """Extract ``n`` consecutive timepoints starting at a seeded-uniform index."""
    t = vs.n_timepoints
    if not 1 <= n <= t:
        raise ShapeError(f"crop length {n} invalid for series with T={t}")
    start = int(rng_for(seed, "crop-start").integers(0, t - n + 1))
    return vs.with_data(vs.data[start : start + n].copy())


def spatial_augment(vs: VolumeSeries, cfg: AugmentConfig, seed: int) -> VolumeSeries:
    """Seed-deterministic augmentation; shape is preserved."""
    plan = make_plan(vs.n_timepoints, cfg, seed)
    return apply_plan(vs, cfg, plan)


@dataclass(frozen=True)
class ViewPair:
    view_a: VolumeSeries
    view_b: VolumeSeries
    seed_a: int
    seed_b: int


def make_view_pair(vs: VolumeSeries, cfg: AugmentConfig, seed: int) -> ViewPair:
    """Two independently augmented crops of one scan (the contrastive pair)."""
    views = []
    seeds = [derive_seed(seed, "view", i) for i in (0, 1)]
    for child in seeds:
        cropped = temporal_crop(vs, cfg.crop_len, derive_seed(child, "crop"))
        views.append(spatial_augment(cropped, cfg, derive_seed(child, "spatial")))
    return ViewPair(view_a=views[0], view_b=views[1], seed_a=seeds[0], seed_b=seeds[1])


class ContrastiveViewMaker(TransformerMixin, BaseEstimator):
    """Transformer producing a :class:`ViewPair` per input scan.

    Per-item seeds derive from ``random_state`` and the item position, so
    the output is independent of batching or parallelism.
    """

    def __init__(self, config: AugmentConfig | None = None, random_state: int = 0):
        self.config = config
        self.random_state = random_state

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        cfg = self.config or AugmentConfig()
        if isinstance(X, VolumeSeries):
            return make_view_pair(X, cfg, derive_seed(self.random_state, 0))
        return [make_view_pair(vs, cfg, derive_seed(self.random_state, i)) for i, vs in enumerate(X)]
