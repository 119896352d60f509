"""Desk-scale studies on synthetic scenes: recovery, smoothing and sparsification.

Each function returns plain numbers/curves so tests and ``scripts/`` can share them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import evaluation as ev
from .prob_render import image_uncertainty, pixel_confidence_heuristic, rasterize_semantics
from .semantic_fusion import (
    DEFAULT_BACKGROUND,
    DEFAULT_PRIOR,
    SemanticState,
    fuse_dataset,
    init_state,
    observation_mass,
)
from .splat_raster import pixel_contributions, render_color
from .scene_io import CameraView, GaussianCloud
from .synthetic import SyntheticScene, generate_scene, look_at, render_labels_oracle


@dataclass
class StudyConfig:
    num_gaussians: int = 50
    num_classes: int = 5
    num_views: int = 20
    width: int = 64
    height: int = 64
    extent: float = 1.0
    noise_rate: float = 0.0
    prior_value: float = DEFAULT_PRIOR
    background_value: float = DEFAULT_BACKGROUND
    num_bins: int = ev.DEFAULT_BINS
    train_fraction: float = 1.0
    random_repeats: int = 20


def split_views(count: int, train_fraction: float, interleave: bool = False):
    """Indices of training and held-out views.

    ``interleave=False`` takes the first ``train_fraction`` of the sequence
    for training; ``interleave=True`` spreads held-out views evenly.
    """
    n_train = int(round(count * train_fraction))
    if interleave:
        train = np.unique(np.round(np.linspace(0, count, n_train, endpoint=False)).astype(int))
    else:
        train = np.arange(n_train)
    held = np.setdiff1d(np.arange(count), train)
    return train.tolist(), held.tolist()


def _scene(cfg: StudyConfig, seed: int) -> SyntheticScene:
    return generate_scene(seed, cfg.num_gaussians, cfg.num_classes, cfg.extent,
                          cfg.num_views, cfg.width, cfg.height)


def _labels(scene, cams, noise_rate, seed, contribs):
    return [render_labels_oracle(scene, cam, noise_rate, seed=seed * 100003 + k, contributions=c)
            for k, (cam, c) in enumerate(zip(cams, contribs))]


@dataclass
class RecoveryResult:
    gaussian_recovery: float
    observed_gaussians: int
    pixel_accuracy: float
    state: object = field(repr=False, default=None)


def recovery_study(seed: int = 0, cfg: StudyConfig | None = None) -> RecoveryResult:
    """Fuse noiseless labels from every view, then score per-gaussian argmax and rendered segmentation."""
    cfg = cfg or StudyConfig()
    scene = _scene(cfg, seed)
    contribs = [pixel_contributions(scene.cloud, cam) for cam in scene.cameras]
    labels = _labels(scene, scene.cameras, cfg.noise_rate, seed, contribs)
    state = fuse_dataset(init_state(len(scene.cloud), cfg.num_classes, cfg.prior_value, cfg.background_value),
                         scene.cloud, list(zip(scene.cameras, labels)))
    observed = observation_mass(state) > 1.0
    recovered = state.concentrations.argmax(axis=1) == scene.gaussian_categories
    hits = total = 0
    for cam, lab, c in zip(scene.cameras, labels, contribs):
        maps = rasterize_semantics(state, scene.cloud, cam, contributions=c)
        keep = (maps.background_weight < 0.1) & lab.valid
        hits += int((maps.argmax_category == lab.category_ids)[keep].sum())
        total += int(keep.sum())
    return RecoveryResult(float(recovered[observed].mean()), int(observed.sum()),
                          hits / max(total, 1), state)


def segmentation_ceiling(seed: int = 0, cfg: StudyConfig | None = None, certainty: float = 1e9) -> float:
    """Rendered segmentation accuracy when every gaussian is certain of its true category.

    Labels name the single heaviest gaussian per pixel while the render takes
    the argmax of the weight-summed mixture, so this bounds what fusion can
    reach on the same pixels (background weight < 0.1).
    """
    cfg = cfg or StudyConfig()
    scene = _scene(cfg, seed)
    conc = np.full((len(scene.cloud), cfg.num_classes), cfg.prior_value)
    conc[np.arange(len(scene.cloud)), scene.gaussian_categories] = certainty
    state = SemanticState(conc, cfg.prior_value, np.full(cfg.num_classes, cfg.background_value))
    hits = total = 0
    for cam in scene.cameras:
        c = pixel_contributions(scene.cloud, cam)
        lab = render_labels_oracle(scene, cam, 0.0, contributions=c)
        maps = rasterize_semantics(state, scene.cloud, cam, contributions=c)
        keep = (maps.background_weight < 0.1) & lab.valid
        hits += int((maps.argmax_category == lab.category_ids)[keep].sum())
        total += int(keep.sum())
    return hits / total if total else float("nan")


@dataclass
class SmoothingResult:
    fused_accuracy: float
    input_accuracy: float
    fused_miou: float
    input_miou: float


def smoothing_study(seed: int, cfg: StudyConfig | None = None) -> SmoothingResult:
    """Fuse noisy labels on training views; score held-out renders and the held-out noisy labels against clean labels."""
    cfg = cfg or StudyConfig(num_views=30, noise_rate=0.2, train_fraction=2 / 3)
    scene = _scene(cfg, seed)
    train, held = split_views(len(scene.cameras), cfg.train_fraction, interleave=True)
    contribs = [pixel_contributions(scene.cloud, cam) for cam in scene.cameras]
    noisy = _labels(scene, scene.cameras, cfg.noise_rate, seed, contribs)
    clean = _labels(scene, scene.cameras, 0.0, seed, contribs)
    state = fuse_dataset(init_state(len(scene.cloud), cfg.num_classes, cfg.prior_value, cfg.background_value),
                         scene.cloud, [(scene.cameras[i], noisy[i]) for i in train])
    fused_cm = input_cm = ev.ConfusionMatrix(np.zeros((cfg.num_classes,) * 2, dtype=np.int64))
    for i in held:
        maps = rasterize_semantics(state, scene.cloud, scene.cameras[i], contributions=contribs[i])
        fused_cm = fused_cm + ev.confusion(maps.argmax_category, clean[i])
        input_cm = input_cm + ev.confusion(noisy[i].category_ids, clean[i])
    _, fm, fa = ev.miou_accuracy(fused_cm)
    _, im, ia = ev.miou_accuracy(input_cm)
    return SmoothingResult(fa, ia, fm, im)


def pixel_sparsification_study(seed: int, cfg: StudyConfig | None = None) -> dict[str, ev.SparsificationCurve]:
    """Fuse noisy labels on all views, render each view, build pixel-level curves against clean labels.

    Every gaussian here is observed hundreds of times, so variance carries
    little beyond background weight; see :func:`partial_observation_study`
    for the regime where it separates good from bad pixels.
    """
    cfg = cfg or StudyConfig(noise_rate=0.2)
    scene = _scene(cfg, seed)
    contribs = [pixel_contributions(scene.cloud, cam) for cam in scene.cameras]
    noisy = _labels(scene, scene.cameras, cfg.noise_rate, seed, contribs)
    clean = _labels(scene, scene.cameras, 0.0, seed, contribs)
    state = fuse_dataset(init_state(len(scene.cloud), cfg.num_classes, cfg.prior_value, cfg.background_value),
                         scene.cloud, list(zip(scene.cameras, noisy)))
    var, exp, heur, err = [], [], [], []
    for cam, gt, c in zip(scene.cameras, clean, contribs):
        maps = rasterize_semantics(state, scene.cloud, cam, contributions=c)
        conf = pixel_confidence_heuristic(state, scene.cloud, cam, contributions=c)
        keep = gt.valid
        var.append(maps.top_variance[keep])
        exp.append(1.0 - maps.top_expectation[keep])
        heur.append(-conf[keep])
        err.append(maps.argmax_category[keep] != gt.category_ids[keep])
    var, exp, heur, err = map(np.concatenate, (var, exp, heur, err))
    kw = dict(num_bins=cfg.num_bins)
    return {
        "by-variance": ev.sparsify_pixels(var, err, ordering="by-variance", **kw),
        "by-expectation": ev.sparsify_pixels(exp, err, ordering="by-expectation", **kw),
        "by-heuristic": ev.sparsify_pixels(heur, err, ordering="by-heuristic", **kw),
        "oracle": ev.sparsify_pixels(None, err, ordering="oracle", **kw),
        "random": ev.sparsify_pixels(None, err, ordering="random", seed=seed, repeats=cfg.random_repeats, **kw),
    }


def simulate_reconstruction(scene: SyntheticScene, train_cams, min_visibility: float = 5.0):
    """Stand-in for a splat model trained only on ``train_cams``.

    Gaussians whose summed compositing weight over the training views is
    below ``min_visibility`` are treated as never reconstructed and dropped.
    Returns the reduced cloud and the kept indices.
    """
    vis = np.zeros(len(scene.cloud))
    for cam in train_cams:
        c = pixel_contributions(scene.cloud, cam)
        vis += np.bincount(c.gaussian, weights=c.kappa, minlength=len(scene.cloud))
    keep = np.flatnonzero(vis >= min_visibility)
    return scene.cloud.subset(keep), keep


def corridor_scene(seed: int, cfg: StudyConfig, blocks: int = 3, spacing: float = 1.2) -> SyntheticScene:
    """``blocks`` synthetic scenes side by side along +x, filmed by cameras sliding along the row.

    Mimics a robot trajectory: early frames see only the first block.
    """
    parts = [generate_scene(seed * blocks + b, cfg.num_gaussians, cfg.num_classes, cfg.extent, 1,
                            cfg.width, cfg.height) for b in range(blocks)]
    offsets = [np.array([b * spacing * cfg.extent, 0.0, 0.0]) for b in range(blocks)]
    cloud = GaussianCloud(
        np.concatenate([p.cloud.positions + o for p, o in zip(parts, offsets)]),
        np.concatenate([p.cloud.rotations for p in parts]),
        np.concatenate([p.cloud.scales for p in parts]),
        np.concatenate([p.cloud.opacities for p in parts]),
        np.concatenate([p.cloud.base_colors for p in parts]),
    )
    dist, height = 2.5 * cfg.extent, 0.6 * cfg.extent
    f = 0.5 * min(cfg.width, cfg.height) / (0.9 / 2.5)
    cams = [CameraView(cfg.width, cfg.height, f, f, (cfg.width - 1) / 2, (cfg.height - 1) / 2,
                       look_at([x, -dist, height], [x, 0.0, 0.0]), near=0.01, far=100.0)
            for x in np.linspace(0.0, (blocks - 1) * spacing * cfg.extent, cfg.num_views)]
    return SyntheticScene(cloud, np.concatenate([p.gaussian_categories for p in parts]), cams, seed,
                          cfg.num_classes, {"blocks": blocks, "spacing": spacing})


@dataclass
class PartialObservationResult:
    """Image- and pixel-level outcomes when only the first views are available for training."""

    u_var: np.ndarray
    u_exp: np.ndarray
    psnr: np.ndarray
    image_curves: dict
    pixel_curves: dict
    train_views: list
    kept_gaussians: int


def partial_observation_study(seed: int, cfg: StudyConfig | None = None) -> PartialObservationResult:
    """Reconstruct and fuse from the first ``train_fraction`` of a corridor sequence; score every view.

    Reference images and clean labels come from the full scene, so views
    beyond the training stretch expose missing geometry.
    """
    cfg = cfg or StudyConfig(num_views=30, noise_rate=0.2, train_fraction=1 / 3)
    scene = corridor_scene(seed, cfg)
    train, _ = split_views(len(scene.cameras), cfg.train_fraction)
    train_cams = [scene.cameras[i] for i in train]
    model, kept = simulate_reconstruction(scene, train_cams)
    full = [pixel_contributions(scene.cloud, cam) for cam in scene.cameras]
    noisy = _labels(scene, scene.cameras, cfg.noise_rate, seed, full)
    clean = _labels(scene, scene.cameras, 0.0, seed, full)
    state = fuse_dataset(init_state(len(model), cfg.num_classes, cfg.prior_value, cfg.background_value),
                         model, [(scene.cameras[i], noisy[i]) for i in train])
    u_var, u_exp, psnrs = [], [], []
    var, exp, heur, err = [], [], [], []
    for cam, gt, fc in zip(scene.cameras, clean, full):
        c = pixel_contributions(model, cam)
        psnrs.append(ev.psnr(render_color(model, cam, contributions=c), render_color(scene.cloud, cam, contributions=fc)))
        maps = rasterize_semantics(state, model, cam, contributions=c)
        unc = image_uncertainty(maps)
        u_var.append(unc.u_var)
        u_exp.append(unc.u_exp)
        conf = pixel_confidence_heuristic(state, model, cam, contributions=c)
        keep = gt.valid
        var.append(maps.top_variance[keep])
        exp.append(1.0 - maps.top_expectation[keep])
        heur.append(-conf[keep])
        err.append(maps.argmax_category[keep] != gt.category_ids[keep])
    u_var, u_exp, psnrs = map(np.array, (u_var, u_exp, psnrs))
    var, exp, heur, err = map(np.concatenate, (var, exp, heur, err))
    rand = dict(seed=seed, repeats=cfg.random_repeats)
    image_bins = min(cfg.num_bins, len(scene.cameras) // 3)
    image_curves = {
        "by-variance": ev.sparsify_images(u_var, psnrs, image_bins, "by-variance"),
        "by-expectation": ev.sparsify_images(u_exp, psnrs, image_bins, "by-expectation"),
        "oracle": ev.sparsify_images(None, psnrs, image_bins, "oracle"),
        "random": ev.sparsify_images(None, psnrs, image_bins, "random", **rand),
    }
    pixel_curves = {
        "by-variance": ev.sparsify_pixels(var, err, cfg.num_bins, "by-variance"),
        "by-expectation": ev.sparsify_pixels(exp, err, cfg.num_bins, "by-expectation"),
        "by-heuristic": ev.sparsify_pixels(heur, err, cfg.num_bins, "by-heuristic"),
        "oracle": ev.sparsify_pixels(None, err, cfg.num_bins, "oracle"),
        "random": ev.sparsify_pixels(None, err, cfg.num_bins, "random", **rand),
    }
    return PartialObservationResult(u_var, u_exp, psnrs, image_curves, pixel_curves, train, len(model))
