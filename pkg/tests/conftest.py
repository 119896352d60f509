from pathlib import Path

import numpy as np
import pytest

from semsplat.scene_io import CameraView, GaussianCloud

FIXTURES = Path(__file__).parent / "fixtures"
SEED0 = FIXTURES / "seed0"


def make_cloud(positions, scales=0.1, opacities=0.9, colors=(1.0, 0.0, 0.0), rotations=None):
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = len(positions)
    scales = np.broadcast_to(np.asarray(scales, dtype=float).reshape(-1, 1) if np.ndim(scales) == 1
                             else np.asarray(scales, dtype=float), (n, 3))
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianCloud(positions, rotations, scales.copy(),
                         np.broadcast_to(opacities, (n,)).copy(),
                         np.broadcast_to(colors, (n, 3)).copy())


def make_camera(width=100, height=100, f=100.0, cx=None, cy=None, pose=None):
    return CameraView(width, height, f, f,
                      width / 2 if cx is None else cx, height / 2 if cy is None else cy,
                      np.eye(4) if pose is None else pose)


def random_cloud(rng, n, extent=1.0):
    q = rng.normal(size=(n, 4))
    return GaussianCloud(
        rng.uniform(-0.5, 0.5, (n, 3)) * extent,
        q / np.linalg.norm(q, axis=1, keepdims=True),
        extent * np.exp(rng.uniform(np.log(0.02), np.log(0.3), (n, 3))),
        rng.uniform(0.05, 0.98, n),
        rng.uniform(0, 1, (n, 3)),
    )


@pytest.fixture
def seed0_dir():
    return SEED0


# ---------------------------------------------------------------------------
# acceptance reporting
# ---------------------------------------------------------------------------

ACCEPTANCE_LINES = []
SESSION = {}


def pytest_sessionstart(session):
    import time

    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # acceptance last so the wall-clock criterion sees the whole run
    items.sort(key=lambda item: item.get_closest_marker("acceptance") is not None)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
