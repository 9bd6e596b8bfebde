"""Pinhole camera model, pose types and SO(3) helpers.

Conventions:
    - ``Pose`` maps world points into the camera frame: p_c = R @ p_w + t.
    - Rotations are full 3x3 matrices.
    - World coordinates are in meters, image coordinates in pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cpnp.errors import DegenerateMatrix, NonPositiveDepth

DEPTH_EPSILON = 1e-12
SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class CameraIntrinsics:
    """Calibrated pinhole intrinsics.

    ``image_width``/``image_height`` are only used by the synthetic generator
    to drop points that fall outside the sensor.
    """

    fx: float
    fy: float
    u0: float
    v0: float
    image_width: Optional[float] = None
    image_height: Optional[float] = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        for name in ("fx", "fy", "u0", "v0"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])

    @property
    def W(self) -> np.ndarray:
        return np.diag([self.fx, self.fy])

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.u0, self.v0])


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        t = np.array(self.t, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map world points (n, 3) into the camera frame."""
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def orthogonality_error(self) -> float:
        return float(np.linalg.norm(self.R.T @ self.R - np.eye(3)))


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired 3D world points and raw (uncentered) pixel observations."""

    points_world: np.ndarray
    pixels: np.ndarray
    _centroid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pw = np.array(self.points_world, dtype=float)
        px = np.array(self.pixels, dtype=float)
        if pw.ndim != 2 or pw.shape[1] != 3:
            raise ValueError(f"points_world must have shape (n, 3), got {pw.shape}")
        if px.ndim != 2 or px.shape[1] != 2:
            raise ValueError(f"pixels must have shape (n, 2), got {px.shape}")
        if pw.shape[0] != px.shape[0]:
            raise ValueError(f"got {pw.shape[0]} world points but {px.shape[0]} pixels")
        if not (np.all(np.isfinite(pw)) and np.all(np.isfinite(px))):
            raise ValueError("correspondences must be finite")
        pw.setflags(write=False)
        px.setflags(write=False)
        object.__setattr__(self, "points_world", pw)
        object.__setattr__(self, "pixels", px)
        centroid = pw.mean(axis=0) if len(pw) else np.full(3, np.nan)
        centroid.setflags(write=False)
        object.__setattr__(self, "_centroid", centroid)

    @property
    def n(self) -> int:
        return self.points_world.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def centroid(self) -> np.ndarray:
        return self._centroid


def project(pose: Pose, intrinsics: CameraIntrinsics, p_world) -> np.ndarray:
    """Project world points to pixels.

    Accepts a single 3-vector or an (n, 3) array and returns a matching
    2-vector or (n, 2) array.
    """
    p = np.asarray(p_world, dtype=float)
    single = p.ndim == 1
    pc = pose.transform(np.atleast_2d(p))
    depth = pc[:, 2]
    bad = np.flatnonzero(depth <= DEPTH_EPSILON)
    if bad.size:
        raise NonPositiveDepth(int(bad[0]), float(depth[bad[0]]))
    q = np.empty((pc.shape[0], 2))
    q[:, 0] = intrinsics.fx * pc[:, 0] / depth + intrinsics.u0
    q[:, 1] = intrinsics.fy * pc[:, 1] / depth + intrinsics.v0
    return q[0] if single else q


def centered_projection(q, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Shift pixel coordinates so the principal point sits at the origin."""
    return np.asarray(q, dtype=float) - intrinsics.principal_point


def reprojection_cost(
    pose: Pose, intrinsics: CameraIntrinsics, data: CorrespondenceSet, chunk_size: int = 4096
) -> float:
    """Mean squared reprojection error in pixels^2."""
    total = 0.0
    for start in range(0, data.n, chunk_size):
        stop = start + chunk_size
        try:
            q = project(pose, intrinsics, data.points_world[start:stop])
        except NonPositiveDepth as exc:
            raise NonPositiveDepth(exc.index + start, exc.depth) from None
        total += float(np.sum((q - data.pixels[start:stop]) ** 2))
    return total / data.n


def hat(s) -> np.ndarray:
    s1, s2, s3 = np.asarray(s, dtype=float).reshape(3)
    return np.array([[0.0, -s3, s2], [s3, 0.0, -s1], [-s2, s1, 0.0]])


def so3_exp(s) -> np.ndarray:
    """Rodrigues formula for exp(hat(s))."""
    s = np.asarray(s, dtype=float).reshape(3)
    theta2 = float(s @ s)
    theta = np.sqrt(theta2)
    S = hat(s)
    if theta < SMALL_ANGLE:
        # second-order Taylor expansion
        a, b = 1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0
    else:
        a, b = np.sin(theta) / theta, (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * S + b * (S @ S)


def rotation_angle(R: np.ndarray) -> float:
    """Angle of a rotation matrix from its trace."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Frobenius-nearest rotation to ``M``."""
    M = np.asarray(M, dtype=float)
    U, sv, Vt = np.linalg.svd(M)
    if sv[-1] <= 1e-12:
        raise DegenerateMatrix(f"matrix is rank deficient (smallest singular value {sv[-1]:.3e})")
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt
