"""Synthetic scenes with known per-gaussian categories, and brute-force reference loops.

The ``brute_force_*`` functions are deliberately naive: one pixel and one
gaussian at a time, no culling beyond the near/far planes, no tiling, and a
projection computed independently of :mod:`semsplat.splat_raster`. They are
the ground truth the fast paths are tested against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DataError
from .prob_render import PixelDistributionMaps
from .scene_io import (
    IGNORE,
    CameraView,
    GaussianCloud,
    LabelImage,
    save_cameras,
    save_gaussian_ply,
    save_label_image,
    save_rgb_png,
)
from .semantic_fusion import SemanticState
from .splat_raster import ALPHA_MAX, ALPHA_MIN, LOWPASS, T_STOP, PixelContributions, pixel_contributions

MAX_ORACLE_GAUSSIANS = 500

# 28 categories, RGB 0-255; index i is drawn for category i.
PALETTE = np.array([
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156), (190, 153, 153),
    (153, 153, 153), (250, 170, 30), (220, 220, 0), (107, 142, 35), (152, 251, 152),
    (70, 130, 180), (220, 20, 60), (255, 0, 0), (0, 0, 142), (0, 0, 70),
    (0, 60, 100), (0, 80, 100), (0, 0, 230), (119, 11, 32), (255, 255, 255),
    (81, 0, 81), (111, 74, 0), (0, 255, 255), (255, 128, 0), (128, 255, 0),
    (0, 128, 64), (160, 90, 200), (90, 40, 10),
], dtype=np.uint8)


@dataclass
class SyntheticScene:
    cloud: GaussianCloud
    gaussian_categories: np.ndarray
    cameras: list[CameraView]
    seed: int
    num_classes: int = 2
    meta: dict = field(default_factory=dict)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """camera_to_world for a camera at ``eye`` looking at ``target`` (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = right, down, forward, eye
    return m


def ring_cameras(center, radius, count, width, height, fov_radius, elevation=0.35,
                 start_angle=0.0, arc=2 * math.pi) -> list[CameraView]:
    """``count`` cameras spaced over ``arc`` radians, aimed at ``center``.

    Focal length is chosen so a sphere of ``fov_radius`` around ``center``
    fits inside the shorter image side.
    """
    center = np.asarray(center, dtype=np.float64)
    dist = math.hypot(radius, elevation * radius)
    half = math.asin(min(fov_radius / dist, 0.99))
    f = 0.5 * min(width, height) / math.tan(half)
    step = arc / count
    cams = []
    for k in range(count):
        a = start_angle + k * step
        eye = center + np.array([radius * math.cos(a), radius * math.sin(a), elevation * radius])
        cams.append(CameraView(width, height, f, f, (width - 1) / 2, (height - 1) / 2,
                               look_at(eye, center), near=0.01, far=100.0))
    return cams


def generate_scene(seed: int, n: int, num_classes: int, extent: float = 1.0, num_views: int = 20,
                   width: int = 64, height: int = 64) -> SyntheticScene:
    if n < 1 or num_classes < 2:
        raise DataError("need n >= 1 and num_classes >= 2")
    if num_classes > len(PALETTE):
        raise DataError(f"palette only covers {len(PALETTE)} categories")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-0.5, 0.5, size=(n, 3)) * extent
    if n == 1:
        positions[:] = 0.0
    scales = extent * np.exp(rng.uniform(np.log(0.02), np.log(0.3), size=(n, 3)))
    opacities = rng.uniform(0.5, 0.95, size=n)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    # one region per category; a gaussian takes the category of the nearest region centre
    centres = rng.uniform(-0.5, 0.5, size=(num_classes, 3)) * extent
    categories = np.argmin(((positions[:, None] - centres[None]) ** 2).sum(-1), axis=1)
    colors = PALETTE[categories] / 255.0
    cloud = GaussianCloud(positions, quats, scales, opacities, colors)
    centroid = positions.mean(axis=0)
    bound = math.sqrt(3) / 2 * extent
    cams = ring_cameras(centroid, 3.0 * extent, num_views, width, height, bound)
    return SyntheticScene(cloud, categories, cams, seed, num_classes,
                          {"extent": extent, "ring_radius": 3.0 * extent, "bound": bound})


def dominant_gaussian(contrib: PixelContributions) -> np.ndarray:
    """Per-pixel index of the largest-weight gaussian (front-most on ties), -1 if none."""
    h, w = contrib.shape
    out = np.full(h * w, -1, dtype=np.int64)
    if len(contrib.kappa):
        order = np.lexsort((np.arange(len(contrib.kappa)), -contrib.kappa, contrib.pixel))
        pix, first = np.unique(contrib.pixel[order], return_index=True)
        out[pix] = contrib.gaussian[order[first]]
    return out.reshape(h, w)


def render_labels_oracle(scene: SyntheticScene, cam: CameraView, noise_rate: float = 0.0,
                         seed: int = 0, contributions: PixelContributions | None = None) -> LabelImage:
    """Labels a segmentation network would emit: dominant gaussian's category plus symmetric noise."""
    if not 0.0 <= noise_rate < 1.0:
        raise DataError("noise_rate must lie in [0, 1)")
    if contributions is None:
        contributions = pixel_contributions(scene.cloud, cam)
    dom = dominant_gaussian(contributions)
    labels = np.where(dom >= 0, scene.gaussian_categories[np.maximum(dom, 0)], IGNORE)
    labels[contributions.background > 0.5] = IGNORE
    rng = np.random.default_rng(seed)
    flip = rng.random(labels.shape) < noise_rate
    shift = rng.integers(1, scene.num_classes, size=labels.shape)
    flip &= labels != IGNORE
    labels[flip] = (labels[flip] + shift[flip]) % scene.num_classes
    return LabelImage(labels, scene.num_classes)


# ---------------------------------------------------------------------------
# brute-force references
# ---------------------------------------------------------------------------


def _oracle_splats(cloud: GaussianCloud, cam: CameraView):
    """(depth, index, mean_u, mean_v, inverse 2x2, opacity, color) for gaussians between near and far."""
    c2w = cam.camera_to_world
    w2c = np.linalg.inv(c2w)
    out = []
    for i in range(len(cloud)):
        p = w2c @ np.append(cloud.positions[i], 1.0)
        x, y, z = p[:3]
        if not cam.near < z < cam.far:
            continue
        w, qx, qy, qz = cloud.rotations[i]
        r_world = Rotation.from_quat([qx, qy, qz, w]).as_matrix()
        sigma_world = r_world @ np.diag(cloud.scales[i] ** 2) @ r_world.T
        sigma_cam = w2c[:3, :3] @ sigma_world @ w2c[:3, :3].T
        jac = np.array([[cam.fx / z, 0.0, -cam.fx * x / (z * z)],
                        [0.0, cam.fy / z, -cam.fy * y / (z * z)]])
        sigma_2d = jac @ sigma_cam @ jac.T + LOWPASS * np.eye(2)
        out.append((z, i, cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy,
                    np.linalg.inv(sigma_2d), cloud.opacities[i], cloud.base_colors[i]))
    out.sort(key=lambda s: (s[0], s[1]))
    return out


def brute_force_render(cloud: GaussianCloud, cam: CameraView, background_color=(0.0, 0.0, 0.0)):
    """Returns (H x W x 3 color, per-pixel lists of (gaussian, kappa) indexed v*W+u, H x W background)."""
    if len(cloud) > MAX_ORACLE_GAUSSIANS:
        raise DataError(f"brute-force oracle limited to {MAX_ORACLE_GAUSSIANS} gaussians")
    splats = _oracle_splats(cloud, cam)
    image = np.zeros((cam.height, cam.width, 3))
    background = np.zeros((cam.height, cam.width))
    lists = []
    for v in range(cam.height):
        for u in range(cam.width):
            contribs = []
            color = [0.0, 0.0, 0.0]
            transmittance = 1.0
            for _, idx, mu, mv, inv, opacity, rgb in splats:
                if transmittance < T_STOP:
                    break
                du, dv = u - mu, v - mv
                power = inv[0, 0] * du * du + (inv[0, 1] + inv[1, 0]) * du * dv + inv[1, 1] * dv * dv
                alpha = min(opacity * math.exp(-0.5 * power), ALPHA_MAX)
                if alpha < ALPHA_MIN:
                    continue
                kappa = alpha * transmittance
                contribs.append((idx, kappa))
                for ch in range(3):
                    color[ch] += rgb[ch] * kappa
                transmittance *= 1.0 - alpha
            bg = 1.0 - sum(k for _, k in contribs)
            image[v, u] = [color[ch] + background_color[ch] * bg for ch in range(3)]
            background[v, u] = bg
            lists.append(contribs)
    return image, lists, background


def brute_force_fuse(state: SemanticState, cloud: GaussianCloud, cam: CameraView,
                     labels: LabelImage) -> SemanticState:
    """Concentration update as a loop over gaussians, pixels and categories."""
    _, lists, _ = brute_force_render(cloud, cam)
    kappa = [dict() for _ in range(len(cloud))]
    for pixel, contribs in enumerate(lists):
        for idx, k in contribs:
            kappa[idx][pixel] = k
    flat = labels.category_ids.reshape(-1)
    alpha = state.concentrations.copy()
    for n in range(len(cloud)):
        for i in range(len(flat)):
            if flat[i] == IGNORE:
                continue
            for c in range(state.num_classes):
                y = 1.0 if flat[i] == c else 0.0
                alpha[n, c] += kappa[n].get(i, 0.0) * y
    return SemanticState(alpha, state.prior_value, state.background)


def _moments(alpha):
    total = sum(alpha)
    mean = [a / total for a in alpha]
    return mean, [m * (1 - m) / (1 + total) for m in mean]


def brute_force_rasterize(state: SemanticState, cloud: GaussianCloud, cam: CameraView) -> PixelDistributionMaps:
    _, lists, _ = brute_force_render(cloud, cam)
    c = state.num_classes
    bg_mean, bg_var = _moments(list(state.background))
    expectation = np.zeros((cam.height * cam.width, c))
    variance = np.zeros((cam.height * cam.width, c))
    background = np.zeros(cam.height * cam.width)
    for i, contribs in enumerate(lists):
        kb = 1.0 - sum(k for _, k in contribs)
        background[i] = kb
        for idx, k in contribs:
            mean, var = _moments(list(state.concentrations[idx]))
            for ch in range(c):
                expectation[i, ch] += k * mean[ch]
                variance[i, ch] += k * k * var[ch]
        for ch in range(c):
            expectation[i, ch] += kb * bg_mean[ch]
            variance[i, ch] += kb * kb * bg_var[ch]
    shape = (cam.height, cam.width)
    return PixelDistributionMaps.from_moments(
        expectation.reshape(*shape, c), variance.reshape(*shape, c), background.reshape(shape))


# ---------------------------------------------------------------------------
# on-disk scene directory
# ---------------------------------------------------------------------------


def write_scene_dir(scene: SyntheticScene, out_dir, noise_rate: float = 0.0, seed: int = 0,
                    background_color=(0.0, 0.0, 0.0)):
    """Write scene.ply, cameras.json (noisy labels), cameras_gt.json (clean labels),
    reference color images and categories.csv."""
    from .splat_raster import render_color

    out = Path(out_dir)
    for sub in ("labels", "gt_labels", "images"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    save_gaussian_ply(scene.cloud, out / "scene.ply")
    noisy, clean = [], []
    for k, cam in enumerate(scene.cameras):
        contrib = pixel_contributions(scene.cloud, cam)
        gt = render_labels_oracle(scene, cam, 0.0, contributions=contrib)
        lab = render_labels_oracle(scene, cam, noise_rate, seed=seed * 100003 + k, contributions=contrib)
        name = f"{k:04d}.png"
        save_label_image(gt, out / "gt_labels" / name)
        save_label_image(lab, out / "labels" / name)
        save_rgb_png(render_color(scene.cloud, cam, background_color, contributions=contrib), out / "images" / name)
        for paths, label_dir in ((noisy, "labels"), (clean, "gt_labels")):
            paths.append(CameraView(cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy,
                                    cam.camera_to_world, cam.near, cam.far,
                                    Path(label_dir) / name, Path("images") / name))
    save_cameras(noisy, out / "cameras.json")
    save_cameras(clean, out / "cameras_gt.json")
    with open(out / "categories.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "category"])
        for i, c in enumerate(scene.gaussian_categories):
            w.writerow([i, int(c)])
