"""Render per-pixel semantic expectation and variance, plus image-level uncertainty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .scene_io import CameraView, GaussianCloud
from .semantic_fusion import SemanticState, observation_mass
from .splat_raster import PixelContributions, pixel_contributions

VAR_EPS = 1e-12


@dataclass
class PixelDistributionMaps:
    expectation: np.ndarray
    variance: np.ndarray
    background_weight: np.ndarray
    argmax_category: np.ndarray
    top_expectation: np.ndarray
    top_variance: np.ndarray

    @classmethod
    def from_moments(cls, expectation, variance, background_weight):
        # np.argmax returns the first maximum, i.e. lowest category index on ties
        top = np.argmax(expectation, axis=-1)
        pick = top[..., None]
        return cls(
            expectation, variance, background_weight, top,
            np.take_along_axis(expectation, pick, -1)[..., 0],
            np.take_along_axis(variance, pick, -1)[..., 0],
        )

    @property
    def shape(self):
        return self.background_weight.shape


@dataclass
class ImageUncertainty:
    u_var: float
    u_exp: float


def rasterize_semantics(state: SemanticState, cloud: GaussianCloud, cam: CameraView,
                        contributions: PixelContributions | None = None,
                        **raster_kw) -> PixelDistributionMaps:
    """Composite gaussian Dirichlet moments into per-pixel moments.

    The background acts as one more splat whose weight is whatever the
    gaussians leave over, carrying ``Dir(state.background)``. Variances use
    squared weights (gaussians treated as independent).
    """
    if len(state) != len(cloud):
        raise DimensionError(f"state has {len(state)} rows but the scene has {len(cloud)} gaussians")
    if contributions is None:
        contributions = pixel_contributions(cloud, cam, **raster_kw)
    elif contributions.shape != cam.shape:
        raise DimensionError("contributions were computed for a different image size")
    per_gaussian = state.moments()
    bg = state.background_moments()
    kb = contributions.background[:, :, None]
    expectation = contributions.weighted_sum(per_gaussian.expectation) + kb * bg.expectation
    variance = contributions.weighted_sum(per_gaussian.variance, power=2) + kb**2 * bg.variance
    return PixelDistributionMaps.from_moments(expectation, variance, contributions.background)


def image_uncertainty_from_variance(maps: PixelDistributionMaps, eps: float = VAR_EPS) -> float:
    """Geometric mean of the predicted-category variance over all pixels."""
    v = np.asarray(maps.top_variance, dtype=np.float64)
    if v.size == 0:
        raise DimensionError("image has no pixels")
    return float(np.exp(np.mean(np.log(v + eps))))


def image_uncertainty_from_expectation(maps: PixelDistributionMaps) -> float:
    """One minus the mean predicted-category probability."""
    e = np.asarray(maps.top_expectation, dtype=np.float64)
    if e.size == 0:
        raise DimensionError("image has no pixels")
    return float(1.0 - e.sum() / e.size)


def image_uncertainty(maps: PixelDistributionMaps) -> ImageUncertainty:
    return ImageUncertainty(image_uncertainty_from_variance(maps), image_uncertainty_from_expectation(maps))


def pixel_confidence_heuristic(state: SemanticState, cloud: GaussianCloud, cam: CameraView,
                               contributions: PixelContributions | None = None,
                               **raster_kw) -> np.ndarray:
    """Weight-averaged observation mass of the gaussians covering each pixel (0 where none do)."""
    if len(state) != len(cloud):
        raise DimensionError(f"state has {len(state)} rows but the scene has {len(cloud)} gaussians")
    if contributions is None:
        contributions = pixel_contributions(cloud, cam, **raster_kw)
    mass = observation_mass(state)
    num = contributions.weighted_sum(mass)[:, :, 0]
    den = contributions.weighted_sum(np.ones(len(cloud)))[:, :, 0]
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out
