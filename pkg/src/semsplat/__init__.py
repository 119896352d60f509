"""Dirichlet semantic beliefs on gaussian splats: fusion from labelled views and probabilistic rendering."""

from .errors import ContractError, DataError, DimensionError, FormatError, SemsplatError
from .prob_render import (
    ImageUncertainty,
    PixelDistributionMaps,
    image_uncertainty,
    image_uncertainty_from_expectation,
    image_uncertainty_from_variance,
    pixel_confidence_heuristic,
    rasterize_semantics,
)
from .scene_io import (
    IGNORE,
    CameraView,
    GaussianCloud,
    LabelImage,
    load_cameras,
    load_gaussian_ply,
    load_label_image,
    load_semantic_state,
    save_semantic_state,
)
from .semantic_fusion import (
    DirichletMoments,
    SemanticState,
    dirichlet_moments,
    fuse_dataset,
    fuse_view,
    init_state,
    observation_mass,
)
from .splat_raster import (
    PixelContribution,
    PixelContributions,
    Splat2D,
    composite_weights,
    kernel_eval,
    pixel_contributions,
    project_splats,
    render_color,
)

__version__ = "0.1.0"
