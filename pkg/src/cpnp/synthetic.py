"""Synthetic PnP scenes.

The default configuration reproduces the standard benchmark setup: an 800 px
focal length on a 640x480 sensor, a camera with Euler angles (pi/3, pi/3, pi/3)
and translation (2, 6, 6), and points drawn uniformly from a box in front of
the camera.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from cpnp.camera import CameraIntrinsics, CorrespondenceSet, Pose, project
from cpnp.errors import RegionNotVisible

NOISE_TRUNCATION = 8.0
EULER_CONVENTION = "xyz"


@dataclass(frozen=True)
class ScenarioConfig:
    n_points: int = 100
    sigma_pixels: float = 0.0
    seed: int = 0
    euler_angles: Tuple[float, float, float] = (np.pi / 3, np.pi / 3, np.pi / 3)
    translation: Tuple[float, float, float] = (2.0, 6.0, 6.0)
    fx: float = 800.0
    fy: float = 800.0
    u0: float = 320.0
    v0: float = 240.0
    image_width: float = 640.0
    image_height: float = 480.0
    # camera-frame box: ((xmin, xmax), (ymin, ymax), (zmin, zmax))
    point_region: Tuple[Tuple[float, float], ...] = field(
        default=((-2.0, 2.0), (-2.0, 2.0), (4.0, 16.0))
    )

    def __post_init__(self):
        if self.n_points < 6:
            raise ValueError(f"n_points must be >= 6, got {self.n_points}")
        if not self.sigma_pixels >= 0:
            raise ValueError(f"sigma_pixels must be >= 0, got {self.sigma_pixels}")
        lo, hi = self.region_bounds
        if np.any(hi <= lo):
            raise ValueError("point_region must have positive volume")

    @property
    def region_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        box = np.asarray(self.point_region, dtype=float)
        return box[:, 0], box[:, 1]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            self.fx, self.fy, self.u0, self.v0, self.image_width, self.image_height
        )

    @property
    def truth(self) -> Pose:
        R = Rotation.from_euler(EULER_CONVENTION, self.euler_angles).as_matrix()
        return Pose(R, np.asarray(self.translation, dtype=float))

    def config_hash(self) -> str:
        """Short stable digest of every field, used to tag trial results."""
        d = asdict(self)
        text = repr(sorted((k, repr(v)) for k, v in d.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _visible(pc: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    u = cfg.fx * pc[:, 0] / pc[:, 2] + cfg.u0
    v = cfg.fy * pc[:, 1] / pc[:, 2] + cfg.v0
    return (u >= 0) & (u <= cfg.image_width) & (v >= 0) & (v <= cfg.image_height)


def generate_scene(cfg: ScenarioConfig) -> Tuple[Pose, CorrespondenceSet]:
    """Sample a scene with exactly ``cfg.n_points`` visible correspondences.

    Points are drawn uniformly in the camera-frame box, kept if their
    noise-free projection lands on the sensor, and mapped back to the world
    frame with the inverse of the true pose. Gaussian pixel noise (clipped at
    8 sigma) is then added. Output depends only on ``cfg``.
    """
    rng = np.random.default_rng(cfg.seed)
    truth = cfg.truth
    lo, hi = cfg.region_bounds
    n = cfg.n_points

    kept = []
    count = 0
    batch = max(2 * n, 64)
    first = True
    while count < n:
        pc = rng.uniform(lo, hi, size=(batch, 3))
        ok = pc[_visible(pc, cfg)]
        if first and ok.shape[0] == 0:
            # acceptance probe over at least 10 n draws
            probe = rng.uniform(lo, hi, size=(max(10 * n - batch, 0), 3))
            if not np.any(_visible(probe, cfg)):
                raise RegionNotVisible(f"no visible points in {10 * n} draws")
            ok = probe[_visible(probe, cfg)]
        first = False
        kept.append(ok[: n - count])
        count += kept[-1].shape[0]
    pc = np.concatenate(kept)

    pw = (pc - truth.t) @ truth.R  # R^T (p_c - t), row-wise
    q = project(truth, cfg.intrinsics, pw)
    if cfg.sigma_pixels > 0:
        noise = rng.standard_normal(size=q.shape)
        np.clip(noise, -NOISE_TRUNCATION, NOISE_TRUNCATION, out=noise)
        q = q + cfg.sigma_pixels * noise
    return truth, CorrespondenceSet(pw, q)


def noise_free_pixels(truth: Pose, cfg: ScenarioConfig, data: CorrespondenceSet) -> np.ndarray:
    """Noise-free projections of ``data.points_world`` under ``truth``."""
    return project(truth, cfg.intrinsics, data.points_world)
