import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from semsplat.errors import ContractError
from semsplat.scene_io import CameraView
from semsplat.splat_raster import (
    ALPHA_MAX,
    LOWPASS,
    Splat2D,
    composite_weights,
    kernel_eval,
    pixel_contributions,
    project_splats,
    render_color,
)
from semsplat.synthetic import brute_force_render, look_at

from conftest import make_camera, make_cloud, random_cloud


def _project_point(p, cam):
    rot, trans = cam.world_to_camera
    x, y, z = rot @ p + trans
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])


class TestProjection:
    def test_center_ray(self):
        splats = project_splats(make_cloud([[0, 0, 5]]), make_camera())
        np.testing.assert_allclose(splats.means[0], [50, 50])
        assert splats.depths[0] == 5

    def test_covariance_against_numeric_jacobian(self):
        cam = make_camera()
        p = np.array([0.0, 0.0, 5.0])
        (cov,) = project_splats(make_cloud([p], scales=0.1), cam).covs
        np.testing.assert_allclose(cov, np.diag([4.3, 4.3]), atol=1e-12)

        # central differences of the pinhole map, pushed through the 3D covariance
        h = 1e-6
        jac = np.stack([(_project_point(p + h * e, cam) - _project_point(p - h * e, cam)) / (2 * h)
                        for e in np.eye(3)], axis=1)
        numeric = jac @ (0.01 * np.eye(3)) @ jac.T + LOWPASS * np.eye(2)
        np.testing.assert_allclose(cov, numeric, rtol=1e-7)

    def test_off_axis_anisotropic_against_numeric_jacobian(self):
        cam = CameraView(80, 60, 70.0, 90.0, 41.0, 28.0, look_at([0.3, -3, 1], [0, 0, 0]))
        q = Rotation.from_euler("xyz", [0.3, -0.7, 1.1]).as_quat()
        cloud = make_cloud([[0.4, 0.2, -0.1]], scales=[[0.05, 0.2, 0.1]], rotations=[[q[3], *q[:3]]])
        (cov,) = project_splats(cloud, cam).covs
        p = cloud.positions[0]
        h = 1e-6
        jac = np.stack([(_project_point(p + h * e, cam) - _project_point(p - h * e, cam)) / (2 * h)
                        for e in np.eye(3)], axis=1)
        r = Rotation.from_quat(q).as_matrix()
        sigma = r @ np.diag([0.05, 0.2, 0.1]) ** 2 @ r.T
        np.testing.assert_allclose(cov, jac @ sigma @ jac.T + LOWPASS * np.eye(2), rtol=1e-6)

    def test_behind_camera_culled(self):
        assert len(project_splats(make_cloud([[0, 0, -1]]), make_camera())) == 0

    def test_far_offscreen_culled(self):
        assert len(project_splats(make_cloud([[100, 0, 5]], scales=0.01), make_camera())) == 0

    def test_covariances_symmetric_positive(self):
        rng = np.random.default_rng(0)
        cloud = random_cloud(rng, 100)
        cam = CameraView(64, 64, 80, 80, 31.5, 31.5, look_at([0, -3, 0.5], [0, 0, 0]))
        covs = project_splats(cloud, cam).covs
        np.testing.assert_allclose(covs, np.swapaxes(covs, 1, 2), atol=1e-9)
        assert (np.linalg.eigvalsh(covs) > 0).all()


class TestKernel:
    def _splat(self, cov):
        return Splat2D(0, np.array([3.0, 4.0]), np.asarray(cov, dtype=float), 1.0, 1.0)

    def test_at_mean(self):
        assert kernel_eval(self._splat([[2.0, 0.3], [0.3, 1.0]]), (3, 4)) == 1.0

    def test_unit_offset(self):
        assert kernel_eval(self._splat(np.eye(2)), (4, 4)) == pytest.approx(math.exp(-0.5), abs=1e-12)
        assert kernel_eval(self._splat(np.eye(2)), (4, 4)) == pytest.approx(0.60653, abs=1e-5)

    def test_half_value_radius(self):
        r = math.sqrt(2 * math.log(2))
        assert kernel_eval(self._splat(np.eye(2)), (3 + r, 4)) == pytest.approx(0.5, abs=1e-12)


class TestCompositing:
    def test_two_halves(self):
        contribs, bg = composite_weights([0.5, 0.5])
        assert [c.kappa for c in contribs] == [0.5, 0.25]
        assert bg == 0.25

    def test_empty(self):
        assert composite_weights([]) == ([], 1.0)

    def test_clamp(self):
        contribs, bg = composite_weights([1.0])
        assert contribs[0].kappa == ALPHA_MAX
        assert bg == pytest.approx(0.01, abs=1e-15)

    def test_skip_below_threshold(self):
        contribs, _ = composite_weights([0.001, 0.5], indices=[7, 8])
        assert [c.gaussian_index for c in contribs] == [8]

    def test_stop_on_low_transmittance(self):
        # after two 0.99 layers transmittance is 1e-4, exactly the stop level, so a third still lands;
        # after three it is 1e-6 and the fourth is dropped
        contribs, _ = composite_weights([1.0, 1.0, 1.0, 1.0])
        assert len(contribs) == 3

    def test_unsorted_depths(self):
        with pytest.raises(ContractError):
            composite_weights([0.5, 0.5], depths=[2.0, 1.0])

    @given(st.lists(st.floats(0.0, 1.0), max_size=30))
    def test_normalized_and_bounded(self, alphas):
        contribs, bg = composite_weights(alphas)
        ks = [c.kappa for c in contribs]
        assert all(0.0 <= k <= 1.0 for k in ks)
        assert sum(ks) + bg == pytest.approx(1.0, abs=1e-12)
        assert bg >= -1e-12


class TestRender:
    def test_red_gaussian_center(self):
        cloud = make_cloud([[0, 0, 5]], scales=0.5, opacities=1 - 1e-9)
        img = render_color(cloud, make_camera(), (0, 0, 0))
        np.testing.assert_allclose(img[50, 50], [0.99, 0, 0], atol=1e-12)

    def test_single_center_contribution(self):
        cloud = make_cloud([[0, 0, 5]], opacities=0.7)
        c = pixel_contributions(cloud, make_camera())
        (entry,) = c.for_pixel(50, 50)
        assert entry.gaussian_index == 0
        assert entry.kappa == pytest.approx(0.7, abs=1e-15)

    def test_uncovered_pixel(self):
        c = pixel_contributions(make_cloud([[0, 0, 5]], scales=0.05), make_camera())
        assert c.for_pixel(0, 0) == []
        assert c.background[0, 0] == 1.0

    def test_nothing_visible_gives_background(self):
        img = render_color(make_cloud([[0, 0, -5]]), make_camera(20, 10), (0.2, 0.4, 0.6))
        np.testing.assert_array_equal(img, np.broadcast_to([0.2, 0.4, 0.6], (10, 20, 3)))

    def test_front_splat_occludes(self):
        cloud = make_cloud([[0, 0, 8], [0, 0, 4]], scales=0.5, opacities=0.9,
                           colors=[[0, 0, 1], [1, 0, 0]])
        entries = pixel_contributions(cloud, make_camera()).for_pixel(50, 50)
        assert [e.gaussian_index for e in entries] == [1, 0]
        assert entries[1].kappa == pytest.approx(0.9 * 0.1)

    def test_equal_depth_ties_broken_by_index(self):
        cloud = make_cloud([[0.01, 0, 5], [0, 0, 5]], scales=0.5, opacities=0.5)
        entries = pixel_contributions(cloud, make_camera()).for_pixel(50, 50)
        assert [e.gaussian_index for e in entries] == [0, 1]

    def test_matches_oracle_small(self):
        rng = np.random.default_rng(11)
        cloud = random_cloud(rng, 30)
        cam = CameraView(24, 20, 30, 30, 11.5, 9.5, look_at([0.5, -3, 1], [0, 0, 0]))
        img, lists, bg = brute_force_render(cloud, cam, (0.1, 0.2, 0.3))
        c = pixel_contributions(cloud, cam, tile_size=7)
        np.testing.assert_allclose(render_color(cloud, cam, (0.1, 0.2, 0.3), c), img, atol=1e-12)
        np.testing.assert_allclose(c.background, bg, atol=1e-12)
        for got, want in zip(c.lists(), lists):
            assert [g for g, _ in got] == [g for g, _ in want]
            np.testing.assert_allclose([k for _, k in got], [k for _, k in want], atol=1e-12)


def _scene(seed, n=40):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, n)
    eye = rng.normal(size=3)
    eye = 3.0 * eye / np.linalg.norm(eye)
    cam = CameraView(32, 24, 35, 35, 15.5, 11.5, look_at(eye, [0, 0, 0], up=(0.3, 0.2, 1.0)))
    return cloud, cam


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_weights_sum_to_one(seed):
    cloud, cam = _scene(seed)
    c = pixel_contributions(cloud, cam)
    total = np.bincount(c.pixel, weights=c.kappa, minlength=32 * 24).reshape(24, 32) + c.background
    np.testing.assert_allclose(total, 1.0, atol=1e-12)
    assert ((c.kappa > 0) & (c.kappa <= ALPHA_MAX)).all()


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_permutation_invariance(seed):
    cloud, cam = _scene(seed)
    perm = np.random.default_rng(seed).permutation(len(cloud))
    a = render_color(cloud, cam, (0.3, 0.3, 0.3))
    b = render_color(cloud.subset(perm), cam, (0.3, 0.3, 0.3))
    np.testing.assert_allclose(a, b, atol=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_rigid_invariance(seed):
    cloud, cam = _scene(seed)
    rng = np.random.default_rng(seed + 1)
    rot = Rotation.random(random_state=seed).as_matrix()
    t = rng.normal(size=3) * 5
    a = render_color(cloud, cam)
    b = render_color(cloud.transformed(rot, t), cam.transformed(rot, t))
    np.testing.assert_allclose(a, b, atol=1e-4)


@given(st.integers(0, 10_000), st.integers(1, 40), st.sampled_from([1, 2, 3, 8]))
@settings(max_examples=15, deadline=None)
def test_tiling_and_threads_do_not_change_results(seed, tile, threads):
    cloud, cam = _scene(seed)
    ref = pixel_contributions(cloud, cam, tile_size=16, threads=1)
    got = pixel_contributions(cloud, cam, tile_size=tile, threads=threads)
    np.testing.assert_array_equal(ref.pixel, got.pixel)
    np.testing.assert_array_equal(ref.gaussian, got.gaussian)
    np.testing.assert_array_equal(ref.kappa, got.kappa)
    np.testing.assert_array_equal(ref.background, got.background)
