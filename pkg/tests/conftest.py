import numpy as np
import pytest

from cpnp.camera import CameraIntrinsics, CorrespondenceSet, Pose
from cpnp.synthetic import ScenarioConfig, generate_scene

ACCEPTANCE_LINES = []


def scene(n=50, sigma=0.0, seed=0, **kw):
    cfg = ScenarioConfig(n_points=n, sigma_pixels=sigma, seed=seed, **kw)
    truth, data = generate_scene(cfg)
    return cfg, truth, data


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_scene(rng, n=30):
    """Random pose and points in front of the camera (no sensor clipping)."""
    R = random_rotation(rng)
    t = rng.uniform(-2, 2, 3)
    pc = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(-3, 3, n), rng.uniform(3, 15, n)])
    pw = (pc - t) @ R
    intr = CameraIntrinsics(*rng.uniform(400, 1200, 2), *rng.uniform(200, 400, 2))
    pose = Pose(R, t)
    q = pc[:, :2] / pc[:, 2:] * [intr.fx, intr.fy] + [intr.u0, intr.v0]
    return pose, intr, CorrespondenceSet(pw, q)


@pytest.fixture
def intr():
    return CameraIntrinsics(800.0, 800.0, 320.0, 240.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
