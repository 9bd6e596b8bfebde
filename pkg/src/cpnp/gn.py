"""Gauss-Newton refinement of a pose on SO(3) x R^3.

The rotation is perturbed on the right, ``R <- R @ exp(hat(s))``, so every
iterate stays a rotation without re-projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import linalg

from cpnp.camera import (
    DEPTH_EPSILON,
    CameraIntrinsics,
    CorrespondenceSet,
    Pose,
    reprojection_cost,
    so3_exp,
)
from cpnp.errors import NonPositiveDepth, SingularNormalMatrix

COND_LIMIT = 1e12
LM_INITIAL_DAMPING = 1e-6
LM_FACTOR = 10.0
LM_RETRIES = 3


@dataclass(frozen=True)
class GnOptions:
    max_iters: int = 5
    step_tol: float = 1e-10
    cost_tol: float = 1e-12
    damping: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.step_tol > 0 and self.cost_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")


@dataclass(frozen=True)
class JacobianBlocks:
    J: np.ndarray  # (2n, 6): columns [s (3), t (3)]
    residual: np.ndarray  # (2n,): centered pixels minus model


@dataclass
class GnResult:
    pose: Pose
    iterations: int
    final_cost: float
    initial_cost: float
    damped: bool = False
    warnings: List[str] = field(default_factory=list)


def psi_matrix() -> np.ndarray:
    """d vec(exp(hat(s))) / d s at s = 0, with column-major ``vec``.

    Column k is vec of the k-th so(3) generator, ``(G_k)_ij = -eps_ijk``.
    """
    psi = np.zeros((9, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        Gk = np.array([[0.0, -e[2], e[1]], [e[2], 0.0, -e[0]], [-e[1], e[0], 0.0]])
        psi[:, k] = Gk.ravel(order="F")
    return psi


_GENERATORS = np.stack([psi_matrix()[:, k].reshape(3, 3, order="F") for k in range(3)])


def _block(
    pose: Pose, intrinsics: CameraIntrinsics, P: np.ndarray, q: np.ndarray, offset: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """Jacobian rows and residuals for a block of points (centered pixels)."""
    R, t = pose.R, pose.t
    pc = P @ R.T + t
    h = pc[:, 2]
    bad = np.flatnonzero(h <= DEPTH_EPSILON)
    if bad.size:
        raise NonPositiveDepth(int(bad[0]) + offset, float(h[bad[0]]))
    m = P.shape[0]
    WE = np.array([[intrinsics.fx, 0.0, 0.0], [0.0, intrinsics.fy, 0.0]])
    g = pc @ WE.T  # (m, 2)
    f = g / h[:, None]

    # d f / d t = (h WE - g e3^T) / h^2
    Dt = np.broadcast_to(WE, (m, 2, 3)) / h[:, None, None]
    Dt = Dt.copy()
    Dt[:, :, 2] -= g / h[:, None] ** 2
    # (p^T kron R) Psi: column k equals R G_k p
    RGp = np.einsum("ab,kbc,ic->iak", R, _GENERATORS, P)
    Ds = Dt @ RGp

    J = np.empty((2 * m, 6))
    J[:, :3] = Ds.reshape(2 * m, 3)
    J[:, 3:] = Dt.reshape(2 * m, 3)
    r = (q - f).reshape(-1)
    return J, r


def jacobian(pose: Pose, intrinsics: CameraIntrinsics, data: CorrespondenceSet) -> JacobianBlocks:
    """Dense 2n x 6 Jacobian of the projection and the residual at ``pose``."""
    q = data.pixels - intrinsics.principal_point
    J, r = _block(pose, intrinsics, data.points_world, q)
    return JacobianBlocks(J=J, residual=r)


def normal_system(
    pose: Pose, intrinsics: CameraIntrinsics, data: CorrespondenceSet, chunk_size: int = 2048
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Streamed ``(J^T J, J^T r, mean squared residual)``."""
    JtJ = np.zeros((6, 6))
    Jtr = np.zeros(6)
    sq = 0.0
    for start in range(0, data.n, chunk_size):
        P = data.points_world[start : start + chunk_size]
        q = data.pixels[start : start + chunk_size] - intrinsics.principal_point
        J, r = _block(pose, intrinsics, P, q, offset=start)
        JtJ += J.T @ J
        Jtr += J.T @ r
        sq += float(r @ r)
    return JtJ, Jtr, sq / data.n


def _apply(pose: Pose, step: np.ndarray) -> Pose:
    return Pose(pose.R @ so3_exp(step[:3]), pose.t + step[3:])


def gn_refine(
    init: Pose,
    intrinsics: CameraIntrinsics,
    data: CorrespondenceSet,
    opts: GnOptions = GnOptions(),
    chunk_size: int = 2048,
) -> GnResult:
    """Iterate Gauss-Newton steps from ``init`` until converged.

    A step that raises the cost is retried with Levenberg damping
    ``mu * mean(diag(J^T J)) * I`` (mu from 1e-6, x10 per retry, three
    retries); if none helps, iteration stops at the current pose. The
    returned cost therefore never exceeds the initial cost.
    """
    pose = init
    warnings: List[str] = []
    damped = False
    JtJ, Jtr, cost = normal_system(pose, intrinsics, data, chunk_size)
    initial_cost = cost
    iterations = 0

    for it in range(1, opts.max_iters + 1):
        if it > 1:
            JtJ, Jtr, cost = normal_system(pose, intrinsics, data, chunk_size)
        iterations = it
        cond = float(np.linalg.cond(JtJ))
        if not cond < COND_LIMIT:
            raise SingularNormalMatrix(f"J^T J condition number {cond:.3e}")
        scale = float(np.trace(JtJ)) / 6.0

        mu = opts.damping
        accepted = None
        stalled = False
        for attempt in range(LM_RETRIES + 1):
            M = JtJ + mu * scale * np.eye(6) if mu > 0 else JtJ
            step = linalg.cho_solve(linalg.cho_factor(M), Jtr)
            candidate = _apply(pose, step)
            try:
                new_cost = reprojection_cost(candidate, intrinsics, data, chunk_size)
            except NonPositiveDepth as exc:
                warnings.append(f"GN step rejected: {exc}")
                new_cost = np.inf
            if new_cost <= cost:
                accepted = (candidate, step, new_cost)
                break
            if attempt == 0 and new_cost - cost <= opts.cost_tol * cost:
                # already at the minimum up to rounding
                stalled = True
                break
            if attempt < LM_RETRIES:
                damped = True
                mu = LM_INITIAL_DAMPING if mu == 0 else mu * LM_FACTOR

        if stalled:
            break
        if accepted is None:
            warnings.append(f"GN stopped at iteration {it}: no cost-decreasing step")
            break
        prev_cost = cost
        pose, step, cost = accepted
        if np.linalg.norm(step) <= opts.step_tol:
            break
        if prev_cost > 0 and (prev_cost - cost) / prev_cost < opts.cost_tol:
            break
        if cost == 0.0:
            break

    if damped:
        warnings.append("Levenberg damping was used in GN refinement")
    return GnResult(
        pose=pose,
        iterations=iterations,
        final_cost=cost,
        initial_cost=initial_cost,
        damped=damped,
        warnings=warnings,
    )
