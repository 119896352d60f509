"""Project 3D gaussians to screen-space splats and alpha-composite them.

The tiled path here is checked pixel-for-pixel against the literal per-pixel
loops in :mod:`semsplat.synthetic`.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, DimensionError
from .scene_io import CameraView, GaussianCloud, quaternion_to_matrix

LOWPASS = 0.3
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4
TILE_SIZE = 16


class Splat2D(NamedTuple):
    gaussian_index: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: float
    opacity: float


class PixelContribution(NamedTuple):
    gaussian_index: int
    kappa: float


@dataclass
class ProjectedSplats:
    """Structure-of-arrays form of a list of :class:`Splat2D`, in input order."""

    index: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    depths: np.ndarray
    opacities: np.ndarray

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i) -> Splat2D:
        return Splat2D(int(self.index[i]), self.means[i], self.covs[i],
                       float(self.depths[i]), float(self.opacities[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def conics(self) -> np.ndarray:
        """Inverse covariances packed as (a, b, c) with inverse = [[a, b], [b, c]]."""
        a, b, c = self.covs[:, 0, 0], self.covs[:, 0, 1], self.covs[:, 1, 1]
        det = a * c - b * b
        return np.stack([c / det, -b / det, a / det], axis=1)

    @property
    def radii(self) -> np.ndarray:
        """Screen distance beyond which opacity times kernel drops under ``ALPHA_MIN``."""
        a, b, c = self.covs[:, 0, 0], self.covs[:, 0, 1], self.covs[:, 1, 1]
        lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
        reach = 2.0 * np.log(np.maximum(self.opacities / ALPHA_MIN, 1.0))
        return np.sqrt(reach * lam_max) * (1 + 1e-6) + 1e-6


def world_covariances(cloud: GaussianCloud) -> np.ndarray:
    rot = quaternion_to_matrix(cloud.rotations)
    return rot @ (cloud.scales[:, :, None] ** 2 * np.swapaxes(rot, 1, 2))


def project_splats(cloud: GaussianCloud, cam: CameraView) -> ProjectedSplats:
    rot, trans = cam.world_to_camera
    t = cloud.positions @ rot.T + trans
    tz = t[:, 2]
    keep = (tz > cam.near) & (tz < cam.far)
    idx = np.flatnonzero(keep)
    t, tz = t[idx], tz[idx]
    means = np.stack([cam.fx * t[:, 0] / tz + cam.cx, cam.fy * t[:, 1] / tz + cam.cy], axis=1)

    jac = np.zeros((len(idx), 2, 3))
    jac[:, 0, 0] = cam.fx / tz
    jac[:, 0, 2] = -cam.fx * t[:, 0] / tz**2
    jac[:, 1, 1] = cam.fy / tz
    jac[:, 1, 2] = -cam.fy * t[:, 1] / tz**2
    m = jac @ rot
    cov = m @ world_covariances(cloud)[idx] @ np.swapaxes(m, 1, 2)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    cov[:, 0, 0] += LOWPASS
    cov[:, 1, 1] += LOWPASS
    splats = ProjectedSplats(idx, means, cov, tz, cloud.opacities[idx])

    r = splats.radii
    on_screen = (
        (means[:, 0] + r >= 0) & (means[:, 0] - r <= cam.width - 1)
        & (means[:, 1] + r >= 0) & (means[:, 1] - r <= cam.height - 1)
        & (splats.opacities >= ALPHA_MIN)
    )
    sel = np.flatnonzero(on_screen)
    return ProjectedSplats(idx[sel], means[sel], cov[sel], tz[sel], splats.opacities[sel])


def kernel_eval(splat: Splat2D, pixel) -> float:
    d = np.asarray(pixel, dtype=np.float64) - splat.mean2d
    return float(np.exp(-0.5 * d @ np.linalg.solve(splat.cov2d, d)))


def composite_weights(alphas, depths=None, indices=None):
    """Front-to-back compositing of per-splat alphas already modulated by the kernel.

    Returns ``(contributions, background_weight)``. Alphas are clamped to
    ``ALPHA_MAX``; those under ``ALPHA_MIN`` are skipped; traversal stops once
    transmittance falls under ``T_STOP``.
    """
    alphas = [float(a) for a in alphas]
    if depths is not None and any(b < a for a, b in zip(depths, depths[1:])):
        raise ContractError("composite_weights requires depth-ascending splats")
    if indices is None:
        indices = range(len(alphas))
    out = []
    transmittance = 1.0
    for gi, a in zip(indices, alphas):
        if transmittance < T_STOP:
            break
        a = min(a, ALPHA_MAX)
        if a < ALPHA_MIN:
            continue
        out.append(PixelContribution(int(gi), a * transmittance))
        transmittance *= 1.0 - a
    return out, 1.0 - sum(c.kappa for c in out)


@dataclass
class PixelContributions:
    """Sparse per-pixel compositing weights for one view.

    Entries are grouped by flat pixel index (``v * width + u``) and, within a
    pixel, listed front to back.
    """

    shape: tuple[int, int]
    pixel: np.ndarray
    gaussian: np.ndarray
    kappa: np.ndarray
    background: np.ndarray

    def for_pixel(self, u: int, v: int) -> list[PixelContribution]:
        p = v * self.shape[1] + u
        lo, hi = np.searchsorted(self.pixel, [p, p + 1])
        return [PixelContribution(int(g), float(k))
                for g, k in zip(self.gaussian[lo:hi], self.kappa[lo:hi])]

    def lists(self) -> list[list[PixelContribution]]:
        h, w = self.shape
        bounds = np.searchsorted(self.pixel, np.arange(h * w + 1))
        return [[PixelContribution(int(g), float(k))
                 for g, k in zip(self.gaussian[bounds[p]:bounds[p + 1]], self.kappa[bounds[p]:bounds[p + 1]])]
                for p in range(h * w)]

    def weighted_sum(self, per_gaussian: np.ndarray, power: int = 1) -> np.ndarray:
        """Per-pixel ``sum_n kappa_n**power * per_gaussian[n]``; returns (H, W, K)."""
        h, w = self.shape
        vals = np.asarray(per_gaussian, dtype=np.float64)
        vals = vals.reshape(len(vals), -1)
        weights = self.kappa**power
        out = np.empty((h * w, vals.shape[1]))
        for k in range(vals.shape[1]):
            out[:, k] = np.bincount(self.pixel, weights=weights * vals[self.gaussian, k], minlength=h * w)
        return out.reshape(h, w, -1)


def _composite_tile(splats, order, conics, radii, x0, y0, x1, y1):
    """Contribution entries and background weights for pixels in [x0, x1) x [y0, y1)."""
    mx, my = splats.means[order, 0], splats.means[order, 1]
    r = radii[order]
    hit = (mx + r >= x0) & (mx - r <= x1 - 1) & (my + r >= y0) & (my - r <= y1 - 1)
    sel = order[hit]
    vv, uu = np.mgrid[y0:y1, x0:x1]
    uu, vv = uu.ravel(), vv.ravel()
    if len(sel) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, np.empty(0), np.ones(len(uu))
    dx = uu[:, None] - splats.means[sel, 0][None, :]
    dy = vv[:, None] - splats.means[sel, 1][None, :]
    a, b, c = conics[sel].T
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    alpha = np.minimum(splats.opacities[sel] * np.exp(-0.5 * q), ALPHA_MAX)
    alpha[alpha < ALPHA_MIN] = 0.0
    trans = np.cumprod(1.0 - alpha, axis=1)
    before = np.empty_like(trans)
    before[:, 0] = 1.0
    before[:, 1:] = trans[:, :-1]
    kappa = alpha * before
    kappa[before < T_STOP] = 0.0
    # sequential sum: zero columns from other tiles' splats leave it bit-identical
    background = 1.0 - np.cumsum(kappa, axis=1)[:, -1]
    pi, si = np.nonzero(kappa)
    return uu[pi], vv[pi], splats.index[sel[si]], kappa[pi, si], background


def pixel_contributions(cloud: GaussianCloud, cam: CameraView, tile_size: int = TILE_SIZE,
                        threads: int = 1) -> PixelContributions:
    splats = project_splats(cloud, cam)
    h, w = cam.height, cam.width
    order = np.lexsort((splats.index, splats.depths))
    conics = splats.conics
    radii = splats.radii
    tiles = [(x0, y0, min(x0 + tile_size, w), min(y0 + tile_size, h))
             for y0 in range(0, h, tile_size) for x0 in range(0, w, tile_size)]

    def work(tile):
        return _composite_tile(splats, order, conics, radii, *tile)

    n_threads = threads or os.cpu_count() or 1
    if n_threads == 1 or len(tiles) == 1:
        results = [work(t) for t in tiles]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(work, tiles))

    background = np.empty((h, w))
    pix, gauss, kap = [], [], []
    for (x0, y0, x1, y1), (u, v, g, k, bg) in zip(tiles, results):
        background[y0:y1, x0:x1] = bg.reshape(y1 - y0, x1 - x0)
        pix.append(v * w + u)
        gauss.append(g)
        kap.append(k)
    pix = np.concatenate(pix).astype(np.int64)
    gauss = np.concatenate(gauss).astype(np.int64)
    kap = np.concatenate(kap)
    perm = np.argsort(pix, kind="stable")
    return PixelContributions((h, w), pix[perm], gauss[perm], kap[perm], background)


def render_color(cloud: GaussianCloud, cam: CameraView, background_color=(0.0, 0.0, 0.0),
                 contributions: PixelContributions | None = None, **kw) -> np.ndarray:
    if contributions is None:
        contributions = pixel_contributions(cloud, cam, **kw)
    elif contributions.shape != cam.shape:
        raise DimensionError("contributions were computed for a different image size")
    image = contributions.weighted_sum(cloud.base_colors)
    return image + contributions.background[:, :, None] * np.asarray(background_color, dtype=np.float64)
