import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semsplat.errors import DataError, DimensionError
from semsplat.scene_io import IGNORE, CameraView, LabelImage
from semsplat.semantic_fusion import (
    SemanticState,
    dirichlet_moments,
    fuse_dataset,
    fuse_view,
    init_state,
    label_increments,
    observation_mass,
)
from semsplat.splat_raster import PixelContributions, pixel_contributions
from semsplat.synthetic import brute_force_fuse, look_at

from conftest import make_camera, make_cloud, random_cloud


def _contrib(shape, entries, background=None):
    """entries: (pixel, gaussian, kappa) triples, pixel-sorted."""
    pix, g, k = (np.array(x) for x in zip(*entries))
    bg = np.ones(shape) if background is None else background
    return PixelContributions(shape, pix.astype(np.int64), g.astype(np.int64), k.astype(float), bg)


class TestInit:
    def test_shape_and_value(self):
        s = init_state(3, 4, 0.001)
        np.testing.assert_array_equal(s.concentrations, np.full((3, 4), 0.001))
        np.testing.assert_array_equal(s.background, np.full(4, 0.001))

    def test_fresh_moments_uniform(self):
        m = init_state(5, 4).moments()
        np.testing.assert_allclose(m.expectation, 0.25, atol=1e-15)

    @pytest.mark.parametrize("prior", [0.0, -1.0])
    def test_nonpositive_prior(self, prior):
        with pytest.raises(DataError):
            init_state(3, 4, prior)

    def test_single_class(self):
        with pytest.raises(DataError):
            init_state(3, 1)


class TestMoments:
    def test_flat(self):
        m = dirichlet_moments([1, 1, 1, 1])
        np.testing.assert_allclose(m.expectation, 0.25)
        np.testing.assert_allclose(m.variance, 0.0375, atol=1e-15)

    def test_two_one(self):
        m = dirichlet_moments([2.0, 1.0])
        np.testing.assert_allclose(m.expectation, [2 / 3, 1 / 3], atol=1e-15)
        assert m.variance[0] == pytest.approx(1 / 18, abs=1e-15)

    def test_concentrated(self):
        assert dirichlet_moments([1000.0, 1.0]).variance[0] < 1e-3

    def test_nonpositive(self):
        with pytest.raises(DataError):
            dirichlet_moments([1.0, 0.0])

    @given(arrays(np.float64, st.integers(2, 12), elements=st.floats(1e-6, 1e6)))
    def test_invariants(self, alpha):
        m = dirichlet_moments(alpha)
        assert m.expectation.sum() == pytest.approx(1.0, abs=1e-9)
        assert (m.variance >= 0).all() and (m.variance <= 0.25).all()


class TestMass:
    def test_fresh(self):
        assert observation_mass(init_state(2, 4, 0.001), 0) == pytest.approx(0.004)

    def test_after_update(self):
        s = init_state(1, 4, 0.001)
        s.concentrations[0, 2] += 0.4
        assert observation_mass(s, 0) == pytest.approx(0.404)


class TestIncrements:
    def test_single_pixel(self):
        c = _contrib((1, 1), [(0, 0, 0.4)])
        inc = label_increments(c, LabelImage(np.array([[2]]), 3), 1)
        s = init_state(1, 3)
        s.concentrations += inc
        np.testing.assert_allclose(s.concentrations[0], [0.001, 0.001, 0.401], atol=1e-15)

    def test_ignore_everywhere(self):
        c = _contrib((1, 2), [(0, 0, 0.4), (1, 0, 0.3)])
        inc = label_increments(c, LabelImage(np.full((1, 2), IGNORE), 3), 1)
        assert (inc == 0).all()

    def test_additive(self):
        c = _contrib((1, 2), [(0, 0, 0.3), (1, 0, 0.5)])
        inc = label_increments(c, LabelImage(np.array([[1, 1]]), 2), 1)
        assert inc[0, 1] == 0.8 and inc[0, 0] == 0


class TestFuseView:
    def _setup(self, seed=0, n=5, size=8, classes=3):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, n)
        cam = CameraView(size, size, 9, 9, (size - 1) / 2, (size - 1) / 2, look_at([0.2, -2.5, 0.6], [0, 0, 0]))
        labels = rng.integers(0, classes, (size, size))
        labels[rng.random((size, size)) < 0.2] = IGNORE
        return cloud, cam, LabelImage(labels, classes)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_triple_loop(self, seed):
        cloud, cam, labels = self._setup(seed)
        state = init_state(len(cloud), 3)
        got = fuse_view(state, cloud, cam, labels)
        want = brute_force_fuse(state, cloud, cam, labels)
        np.testing.assert_allclose(got.concentrations, want.concentrations, rtol=1e-9, atol=1e-12)

    def test_input_state_untouched(self):
        cloud, cam, labels = self._setup()
        state = init_state(len(cloud), 3)
        fuse_view(state, cloud, cam, labels)
        assert (state.concentrations == 0.001).all()

    def test_mass_conservation(self):
        cloud, cam, labels = self._setup(seed=5, size=16)
        state = init_state(len(cloud), 3)
        out = fuse_view(state, cloud, cam, labels)
        bg = pixel_contributions(cloud, cam).background
        added = (out.concentrations - state.concentrations).sum()
        assert added == pytest.approx((1 - bg)[labels.valid].sum(), abs=1e-6)

    def test_state_cloud_mismatch(self):
        cloud, cam, labels = self._setup()
        with pytest.raises(DimensionError):
            fuse_view(init_state(len(cloud) + 1, 3), cloud, cam, labels)

    def test_label_camera_mismatch(self):
        cloud, cam, _ = self._setup()
        with pytest.raises(DimensionError):
            fuse_view(init_state(len(cloud), 3), cloud, cam, LabelImage(np.zeros((4, 4)), 3))

    def test_class_mismatch(self):
        cloud, cam, labels = self._setup()
        with pytest.raises(DimensionError):
            fuse_view(init_state(len(cloud), 4), cloud, cam, labels)


class TestFuseDataset:
    def _views(self, seed, count=6):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, 20)
        views = []
        for k in range(count):
            a = 2 * np.pi * k / count
            cam = CameraView(16, 16, 18, 18, 7.5, 7.5, look_at([3 * np.cos(a), 3 * np.sin(a), 0.8], [0, 0, 0]))
            views.append((cam, LabelImage(rng.integers(0, 4, (16, 16)), 4)))
        return cloud, views

    def test_empty_view_list(self):
        cloud, _ = self._views(0)
        s = init_state(len(cloud), 4)
        assert (fuse_dataset(s, cloud, []).concentrations == s.concentrations).all()

    @given(st.integers(0, 1000))
    @settings(max_examples=10, deadline=None)
    def test_order_independent(self, seed):
        cloud, views = self._views(seed)
        s = init_state(len(cloud), 4)
        a = fuse_dataset(s, cloud, views).concentrations
        perm = np.random.default_rng(seed).permutation(len(views))
        b = fuse_dataset(s, cloud, [views[i] for i in perm]).concentrations
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_monotone(self):
        cloud, views = self._views(3)
        s = init_state(len(cloud), 4)
        prev = s
        for cam, lab in views:
            nxt = fuse_view(prev, cloud, cam, lab)
            assert (nxt.concentrations >= prev.concentrations).all()
            prev = nxt
        assert observation_mass(prev).sum() > observation_mass(s).sum()

    def test_progress_callback(self):
        cloud, views = self._views(1, count=3)
        seen = []
        fuse_dataset(init_state(len(cloud), 4), cloud, views, progress=lambda i, m: seen.append((i, m)))
        assert [i for i, _ in seen] == [0, 1, 2]
        assert all(m >= 0 for _, m in seen)

    def test_matches_sequential_fuse_view(self):
        cloud, views = self._views(2)
        s = init_state(len(cloud), 4)
        seq = s
        for cam, lab in views:
            seq = fuse_view(seq, cloud, cam, lab)
        np.testing.assert_allclose(fuse_dataset(s, cloud, views).concentrations, seq.concentrations, rtol=1e-12)


def test_state_validation():
    with pytest.raises(DimensionError):
        SemanticState(np.ones((2, 3)), 0.001, np.ones(2))
    with pytest.raises(DataError):
        SemanticState(np.ones((2, 3)), 0.001, np.zeros(3))


def test_one_gaussian_update_center():
    cloud = make_cloud([[0, 0, 5]], scales=0.2, opacities=0.8)
    cam = make_camera(20, 20, f=20, cx=10, cy=10)
    s = fuse_view(init_state(1, 2), cloud, cam, LabelImage(np.ones((20, 20), np.uint8), 2))
    assert s.concentrations[0, 0] == 0.001
    assert s.concentrations[0, 1] > 0.8
