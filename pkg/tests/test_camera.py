import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from cpnp.camera import (
    CameraIntrinsics,
    CorrespondenceSet,
    Pose,
    centered_projection,
    hat,
    project,
    project_to_so3,
    reprojection_cost,
    rotation_angle,
    so3_exp,
)
from cpnp.errors import DegenerateMatrix, NonPositiveDepth
from cpnp.gn import jacobian

from conftest import random_rotation, scene

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=st.floats(-np.pi / np.sqrt(3), np.pi / np.sqrt(3)))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 800.0, 320.0, 240.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(800.0, -1.0, 320.0, 240.0)
    K = CameraIntrinsics(800.0, 700.0, 320.0, 240.0).K
    assert np.array_equal(K, [[800, 0, 320], [0, 700, 240], [0, 0, 1]])


def test_correspondence_set_validation():
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((5, 3)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((5, 2)), np.zeros((5, 2)))
    data = CorrespondenceSet([[0, 0, 1], [2, 4, 7]], [[1, 2], [3, 4]])
    assert data.n == 2
    assert np.array_equal(data.centroid, [1, 2, 4])


class TestProject:
    def test_optical_axis_hits_principal_point(self, intr):
        pose = Pose(np.eye(3), [0, 0, 5])
        assert np.array_equal(project(pose, intr, [0, 0, 0]), [320, 240])

    def test_similar_triangles(self, intr):
        pose = Pose(np.eye(3), [0, 0, 4])
        assert np.allclose(project(pose, intr, [2, 2, 0]), [720, 640])

    def test_zero_depth_raises(self, intr):
        pose = Pose(np.eye(3), [0, 0, 0])
        with pytest.raises(NonPositiveDepth):
            project(pose, intr, [1, 1, 0])

    def test_batch_matches_single(self, intr):
        pose = Pose(random_rotation(np.random.default_rng(1)), [0, 0, 30])
        pts = np.random.default_rng(2).uniform(-3, 3, (10, 3))
        batch = project(pose, intr, pts)
        for p, q in zip(pts, batch):
            assert np.allclose(project(pose, intr, p), q, rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "q, expected", [([320, 240], [0, 0]), ([720, 640], [400, 400]), ([0, 0], [-320, -240])]
)
def test_centered_projection(intr, q, expected):
    assert np.array_equal(centered_projection(q, intr), expected)


@given(arrays(np.int64, 2, elements=st.integers(-(2**32), 2**32)))
def test_centered_projection_inverts_exactly(ticks):
    # sub-pixel coordinates quantized to 2^-20 px round-trip bit for bit
    q = ticks / 2.0**20
    intr = CameraIntrinsics(800.0, 800.0, 320.0, 240.0)
    back = centered_projection(q, intr) + intr.principal_point
    assert np.array_equal(back, q)


@given(arrays(np.float64, 2, elements=finite))
def test_centered_projection_inverts_within_ulp(q):
    intr = CameraIntrinsics(800.0, 800.0, 320.0, 240.0)
    back = centered_projection(q, intr) + intr.principal_point
    assert np.all(np.abs(back - q) <= np.spacing(np.abs(q) + 320.0))


class TestReprojectionCost:
    def test_zero_at_truth(self):
        cfg, truth, data = scene(n=200, sigma=0.0, seed=4)
        assert reprojection_cost(truth, cfg.intrinsics, data) <= 1e-18

    def test_three_four_five(self, intr):
        pose = Pose(np.eye(3), [0, 0, 5])
        data = CorrespondenceSet([[0, 0, 0]], [[323, 244]])
        assert reprojection_cost(pose, intr, data) == pytest.approx(25.0)

    def test_error_index_is_global(self, intr):
        pts = np.tile([0.0, 0.0, 1.0], (10, 1))
        pts[7] = [0, 0, -10]
        data = CorrespondenceSet(pts, np.zeros((10, 2)))
        with pytest.raises(NonPositiveDepth) as exc:
            reprojection_cost(Pose(np.eye(3), [0, 0, 0]), intr, data, chunk_size=3)
        assert exc.value.index == 7

    def test_first_order_matches_jacobian(self):
        rng = np.random.default_rng(9)
        cfg, truth, data = scene(n=100, seed=9)
        J = jacobian(truth, cfg.intrinsics, data).J
        s = rng.standard_normal(3)
        s *= 1e-6 / np.linalg.norm(s)
        moved = Pose(truth.R @ so3_exp(s), truth.t)
        cost = reprojection_cost(moved, cfg.intrinsics, data)
        predicted = np.sum((J @ np.concatenate([s, np.zeros(3)])) ** 2) / data.n
        assert cost == pytest.approx(predicted, rel=1e-2)


class TestSo3Exp:
    def test_zero(self):
        assert np.array_equal(so3_exp([0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        R = so3_exp([0, 0, np.pi / 2])
        assert np.allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_small_angle_branch_continuous(self):
        s = np.array([3e-9, -4e-9, 1e-9])
        expected = Rotation.from_rotvec(s).as_matrix()
        assert np.allclose(so3_exp(s), expected, atol=1e-17)

    def test_hat_is_skew(self):
        S = hat([1.0, -2.0, 3.5])
        assert np.array_equal(S.T, -S)
        assert np.array_equal(S @ [1.0, -2.0, 3.5], [0, 0, 0])

    @given(vec3)
    def test_inverse(self, s):
        prod = so3_exp(s) @ so3_exp(-s)
        assert np.linalg.norm(prod - np.eye(3)) <= 1e-12

    @given(vec3)
    def test_is_rotation_with_angle_norm(self, s):
        R = so3_exp(s)
        assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-9
        assert abs(np.linalg.det(R) - 1) <= 1e-9
        theta = np.linalg.norm(s)
        if 1e-4 < theta < np.pi - 1e-4:
            # arccos loses precision near 0 and pi
            assert rotation_angle(R) == pytest.approx(theta, abs=1e-10)

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = rng.uniform(-2, 2, 3)
            assert np.allclose(so3_exp(s), Rotation.from_rotvec(s).as_matrix(), atol=1e-14)


class TestProjectToSo3:
    def test_identity_on_rotations(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            R = random_rotation(rng)
            assert np.linalg.norm(project_to_so3(R) - R) <= 1e-12

    def test_removes_positive_scale(self):
        assert np.allclose(project_to_so3(2 * np.eye(3)), np.eye(3), atol=1e-15)

    def test_rank_deficient(self):
        with pytest.raises(DegenerateMatrix):
            project_to_so3(np.diag([1.0, 1.0, 0.0]))

    def test_reflection_matches_grid_search(self):
        M = np.diag([1.0, 1.0, -1.0])
        # brute force: rotation grid over Euler angles
        step = 2 * np.pi / 48
        a = np.arange(-np.pi, np.pi, step)
        b = np.arange(-np.pi / 2, np.pi / 2 + step, step)
        grid = np.stack(np.meshgrid(a, b, a, indexing="ij"), axis=-1).reshape(-1, 3)
        Rs = Rotation.from_euler("zyz", grid).as_matrix()
        dists = np.linalg.norm(Rs - M, axis=(1, 2))
        best = dists.min()
        R = project_to_so3(M)
        assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-12
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        got = np.linalg.norm(R - M)
        assert got <= best + 1e-12
        # grid resolution: distance error is second order in the step
        assert got >= best - step**2

    @settings(max_examples=50)
    @given(arrays(np.float64, (3, 3), elements=st.floats(-10, 10)))
    def test_idempotent(self, M):
        if np.linalg.svd(M, compute_uv=False)[-1] < 1e-3:
            return
        R = project_to_so3(M)
        assert np.linalg.norm(project_to_so3(R) - R) <= 1e-12
        assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-9
        assert abs(np.linalg.det(R) - 1) <= 1e-9
