"""Per-gaussian Dirichlet beliefs updated from labelled views by kernel inference.

Each labelled pixel adds its compositing weight to the matching category's
concentration on every gaussian that contributes to that pixel. Opacity and
Dirichlet concentration are kept as separate names everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .scene_io import CameraView, GaussianCloud, LabelImage
from .splat_raster import PixelContributions, pixel_contributions

DEFAULT_PRIOR = 1e-3
DEFAULT_BACKGROUND = 1e-3


@dataclass
class DirichletMoments:
    expectation: np.ndarray
    variance: np.ndarray


@dataclass
class SemanticState:
    concentrations: np.ndarray
    prior_value: float
    background: np.ndarray

    def __post_init__(self):
        self.concentrations = np.array(self.concentrations, dtype=np.float64)
        self.background = np.array(self.background, dtype=np.float64)
        if self.concentrations.ndim != 2:
            raise DimensionError("concentrations must be an N x C matrix")
        if self.background.shape != (self.num_classes,):
            raise DimensionError("background vector must have one entry per class")
        if not self.prior_value > 0:
            raise DataError("prior value must be positive")
        if not (self.background > 0).all():
            raise DataError("background concentrations must be positive")

    @property
    def num_classes(self) -> int:
        return self.concentrations.shape[1]

    def __len__(self):
        return self.concentrations.shape[0]

    def copy(self) -> "SemanticState":
        return SemanticState(self.concentrations.copy(), self.prior_value, self.background.copy())

    def moments(self) -> DirichletMoments:
        """Moments of every gaussian's Dirichlet, row-wise."""
        return dirichlet_moments(self.concentrations)

    def background_moments(self) -> DirichletMoments:
        return dirichlet_moments(self.background)


def init_state(n: int, num_classes: int, prior_value: float = DEFAULT_PRIOR,
               background_value: float | None = None) -> SemanticState:
    if num_classes < 2:
        raise DataError("need at least two categories")
    if n < 1:
        raise DataError("need at least one gaussian")
    if not prior_value > 0:
        raise DataError("Dirichlet prior must be positive")
    if background_value is None:
        background_value = prior_value
    return SemanticState(
        np.full((n, num_classes), float(prior_value)),
        float(prior_value),
        np.full(num_classes, float(background_value)),
    )


def dirichlet_moments(concentration) -> DirichletMoments:
    """Mean and per-category variance of ``Dir(concentration)``.

    Works on a single length-C vector or on the rows of an (..., C) array.
    """
    alpha = np.asarray(concentration, dtype=np.float64)
    if not (alpha > 0).all():
        raise DataError("Dirichlet concentrations must be positive")
    total = alpha.sum(axis=-1, keepdims=True)
    # E(1 - E) / (1 + total) with 1 - E written as (total - alpha) / total,
    # which avoids rounding 1 - E separately
    var = alpha * (total - alpha) / (total * total * (1.0 + total))
    return DirichletMoments(alpha / total, var)


def observation_mass(state: SemanticState, n=None):
    """Total concentration of gaussian ``n`` (all gaussians when ``n`` is None)."""
    if n is None:
        return state.concentrations.sum(axis=1)
    return float(state.concentrations[n].sum())


def label_increments(contrib: PixelContributions, labels: LabelImage, num_gaussians: int) -> np.ndarray:
    """N x C matrix of summed compositing weights per (gaussian, observed label)."""
    c = labels.num_classes
    lab = labels.category_ids.reshape(-1)[contrib.pixel].astype(np.int64)
    keep = lab != 255
    flat = contrib.gaussian[keep] * c + lab[keep]
    inc = np.bincount(flat, weights=contrib.kappa[keep], minlength=num_gaussians * c)
    return inc.reshape(num_gaussians, c)


def fuse_view(state: SemanticState, cloud: GaussianCloud, cam: CameraView, labels: LabelImage,
              contributions: PixelContributions | None = None, **raster_kw) -> SemanticState:
    """Return a new state with one labelled view folded in."""
    if len(state) != len(cloud):
        raise DimensionError(f"state has {len(state)} rows but the scene has {len(cloud)} gaussians")
    if labels.num_classes != state.num_classes:
        raise DimensionError("label image and state disagree on the number of classes")
    labels.check_matches(cam)
    if contributions is None:
        contributions = pixel_contributions(cloud, cam, **raster_kw)
    out = state.copy()
    out.concentrations += label_increments(contributions, labels, len(cloud))
    return out


def fuse_dataset(state: SemanticState, cloud: GaussianCloud, views, progress=None,
                 **raster_kw) -> SemanticState:
    """Fold in every ``(camera, labels)`` pair.

    Per-view increments are summed in view order and added once, so the
    result depends only on the multiset of views up to float rounding.
    """
    total = np.zeros_like(state.concentrations)
    for i, (cam, labels) in enumerate(views):
        if len(state) != len(cloud):
            raise DimensionError(f"state has {len(state)} rows but the scene has {len(cloud)} gaussians")
        if labels.num_classes != state.num_classes:
            raise DimensionError("label image and state disagree on the number of classes")
        labels.check_matches(cam)
        contrib = pixel_contributions(cloud, cam, **raster_kw)
        inc = label_increments(contrib, labels, len(cloud))
        total += inc
        if progress is not None:
            progress(i, float(inc.sum()))
    out = state.copy()
    out.concentrations += total
    return out
