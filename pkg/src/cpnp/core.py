"""Closed-form CPnP: linear system, noise variance, bias-eliminated solve.

The 11-vector ``theta`` is laid out as::

    theta = alpha * [r3 (3), r1 (3), t1, r2 (3), t2]

where r1, r2, r3 are the rows of R and the scale alpha is fixed by
``alpha * sum_i depth_i = n``. Indices below are 0-based.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from cpnp.camera import (
    DEPTH_EPSILON,
    CameraIntrinsics,
    CorrespondenceSet,
    Pose,
    project_to_so3,
    reprojection_cost,
)
from cpnp.errors import (
    CorrectedMatrixNotPD,
    CPnPError,
    DegenerateMatrix,
    DegenerateTheta,
    IllConditionedSystem,
    NoRealRoot,
    TooFewPoints,
)

MIN_POINTS = 6
COND_LIMIT = 1e12
DET_EPSILON = 1e-12
REAL_ROOT_TOL = 1e-6
DEFAULT_CHUNK = 2048

# Phi/Delta indices: Delta is nonzero only on the r3 block and the last entry.
_NOISY = np.array([0, 1, 2, 11])
_CLEAN = np.arange(3, 11)


@dataclass(frozen=True)
class LinearSystem:
    """Dense regressor ``A``, regressand ``b`` and noise pattern ``G``.

    Row ``2i`` holds the u equation of point i and row ``2i + 1`` the v
    equation. Only practical for moderate n; the solver itself works on
    :class:`NormalEquations`.
    """

    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    centroid: np.ndarray

    @property
    def n(self) -> int:
        return self.b.shape[0] // 2

    def normal_equations(self) -> "NormalEquations":
        ones = np.ones(self.b.shape[0])
        return NormalEquations(
            AtA=self.A.T @ self.A,
            Atb=self.A.T @ self.b,
            btb=float(self.b @ self.b),
            GtG=self.G.T @ self.G,
            Gt1=self.G.T @ ones,
            n=self.n,
            centroid=self.centroid,
        )


@dataclass(frozen=True)
class NormalEquations:
    """Gram sums of the eliminated system, accumulated point by point."""

    AtA: np.ndarray
    Atb: np.ndarray
    btb: float
    GtG: np.ndarray
    Gt1: np.ndarray
    n: int
    centroid: np.ndarray

    def phi(self) -> np.ndarray:
        Phi = np.empty((12, 12))
        Phi[:11, :11] = self.AtA
        Phi[:11, 11] = self.Atb
        Phi[11, :11] = self.Atb
        Phi[11, 11] = self.btb
        return Phi / self.n

    def delta(self) -> np.ndarray:
        Delta = np.empty((12, 12))
        Delta[:11, :11] = self.GtG
        Delta[:11, 11] = self.Gt1
        Delta[11, :11] = self.Gt1
        Delta[11, 11] = 2.0 * self.n
        return Delta / self.n


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2_hat: float
    roots: np.ndarray
    raw_min: float = 0.0

    @property
    def clamped(self) -> bool:
        return self.raw_min < 0.0


Normal = Union[LinearSystem, NormalEquations]


def _as_normal(sys: Normal) -> NormalEquations:
    return sys.normal_equations() if isinstance(sys, LinearSystem) else sys


def _check_count(data: CorrespondenceSet):
    if data.n < MIN_POINTS:
        raise TooFewPoints(f"need at least {MIN_POINTS} correspondences, got {data.n}")


def _rows(P: np.ndarray, q: np.ndarray, centroid: np.ndarray, intrinsics: CameraIntrinsics):
    """A and G rows for a block of points (centered pixels ``q``)."""
    m = P.shape[0]
    d = P - centroid
    A = np.zeros((2 * m, 11))
    A[0::2, 0:3] = -q[:, [0]] * d
    A[0::2, 3:6] = intrinsics.fx * P
    A[0::2, 6] = intrinsics.fx
    A[1::2, 0:3] = -q[:, [1]] * d
    A[1::2, 7:10] = intrinsics.fy * P
    A[1::2, 10] = intrinsics.fy
    G = np.zeros((2 * m, 11))
    G[0::2, 0:3] = -d
    G[1::2, 0:3] = -d
    return A, G


def build_system(data: CorrespondenceSet, intrinsics: CameraIntrinsics) -> LinearSystem:
    """Assemble the dense eliminated system ``b = A theta + noise``."""
    _check_count(data)
    q = data.pixels - intrinsics.principal_point
    A, G = _rows(data.points_world, q, data.centroid, intrinsics)
    return LinearSystem(A=A, b=q.reshape(-1), G=G, centroid=data.centroid.copy())


def accumulate_normal_equations(
    data: CorrespondenceSet, intrinsics: CameraIntrinsics, chunk_size: int = DEFAULT_CHUNK
) -> NormalEquations:
    """Stream the Gram sums over fixed-size point blocks.

    Extra memory is bounded by ``chunk_size`` regardless of n, and the
    summation order is fixed, so results are reproducible bit for bit.
    """
    _check_count(data)
    centroid = data.centroid
    AtA = np.zeros((11, 11))
    Atb = np.zeros(11)
    btb = 0.0
    GtG = np.zeros((11, 11))
    Gt1 = np.zeros(11)
    for start in range(0, data.n, chunk_size):
        P = data.points_world[start : start + chunk_size]
        q = data.pixels[start : start + chunk_size] - intrinsics.principal_point
        A, G = _rows(P, q, centroid, intrinsics)
        b = q.reshape(-1)
        AtA += A.T @ A
        Atb += A.T @ b
        btb += float(b @ b)
        GtG += G.T @ G
        Gt1 += G.sum(axis=0)
    return NormalEquations(AtA, Atb, btb, GtG, Gt1, data.n, centroid.copy())


def condition_number(M: np.ndarray) -> float:
    return float(np.linalg.cond(M))


def solve_biased(sys: Normal, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Ordinary least squares ``(A^T A)^-1 A^T b``; biased under pixel noise."""
    ne = _as_normal(sys)
    cond = condition_number(ne.AtA)
    if not cond < cond_limit:
        raise IllConditionedSystem(cond)
    return linalg.cho_solve(linalg.cho_factor(ne.AtA), ne.Atb)


def quartic_roots(Phi: np.ndarray, Delta: np.ndarray) -> np.ndarray:
    """All roots of ``det(Phi - lam * Delta)``.

    Delta vanishes outside the (r3, b) rows/columns, so the determinant
    factors as ``det(Phi_cc) * det(S - lam * Delta_nn)`` with S the Schur
    complement of the clean block. The four roots are then the eigenvalues
    of the 4x4 symmetric-definite pencil (S, Delta_nn).
    """
    nn = np.ix_(_NOISY, _NOISY)
    nc = np.ix_(_NOISY, _CLEAN)
    cc = np.ix_(_CLEAN, _CLEAN)
    S = Phi[nn] - Phi[nc] @ linalg.solve(Phi[cc], Phi[nc].T, assume_a="pos")
    S = 0.5 * (S + S.T)
    D = Delta[nn]
    try:
        return linalg.eigh(S, D, eigvals_only=True)
    except linalg.LinAlgError:
        # Delta block singular (all points share one centroid offset): fall
        # back to the general pencil and let the realness filter decide.
        return linalg.eigvals(S, D)


def estimate_noise_variance(sys: Normal) -> VarianceEstimate:
    """Consistent estimate of the pixel noise variance.

    Returns the smallest real root of ``det(Phi - lam * Delta)`` clamped at 0;
    the unclamped value is kept in ``raw_min``.
    """
    ne = _as_normal(sys)
    if ne.n < MIN_POINTS:
        raise TooFewPoints(f"need at least {MIN_POINTS} correspondences, got {ne.n}")
    roots = np.asarray(quartic_roots(ne.phi(), ne.delta()))
    roots_c = roots.astype(complex)
    real = roots_c.real[
        np.isfinite(roots_c) & (np.abs(roots_c.imag) <= REAL_ROOT_TOL * (1 + np.abs(roots_c.real)))
    ]
    if real.size == 0:
        raise NoRealRoot(f"no real root among {roots}")
    raw = float(real.min())
    return VarianceEstimate(sigma2_hat=max(raw, 0.0), roots=roots, raw_min=raw)


def solve_bias_eliminated(sys: Normal, var: VarianceEstimate) -> np.ndarray:
    """``(A^T A - s2 G^T G)^-1 (A^T b - s2 G^T 1)`` with s2 the variance estimate."""
    ne = _as_normal(sys)
    s2 = var.sigma2_hat
    M = ne.AtA - s2 * ne.GtG
    rhs = ne.Atb - s2 * ne.Gt1
    try:
        factor = linalg.cho_factor(M)
    except linalg.LinAlgError:
        raise CorrectedMatrixNotPD(float(np.linalg.eigvalsh(M)[0])) from None
    return linalg.cho_solve(factor, rhs)


def stack_theta(pose: Pose, centroid, alpha: Optional[float] = None) -> np.ndarray:
    """Inverse of :func:`recover_pose`.

    ``alpha`` defaults to the value implied by the scale constraint,
    ``1 / (t3 + centroid . r3)``.
    """
    R, t = pose.R, pose.t
    centroid = np.asarray(centroid, dtype=float)
    if alpha is None:
        alpha = 1.0 / (t[2] + centroid @ R[2])
    return alpha * np.concatenate([R[2], R[0], [t[0]], R[1], [t[1]]])


def rotation_block(theta: np.ndarray) -> np.ndarray:
    """The scaled rotation ``alpha * R`` stored in theta."""
    theta = np.asarray(theta, dtype=float)
    return np.vstack([theta[3:6], theta[7:10], theta[0:3]])


def recover_pose(theta: np.ndarray, centroid, project: bool = True) -> Tuple[float, Pose]:
    """Split theta into (alpha, R, t).

    The sign of the cube root follows the determinant, so a mirrored solution
    comes back with negative alpha instead of being silently flipped.
    """
    theta = np.asarray(theta, dtype=float)
    centroid = np.asarray(centroid, dtype=float)
    M = rotation_block(theta)
    det = float(np.linalg.det(M))
    if not abs(det) > DET_EPSILON:
        raise DegenerateTheta(f"|det| of rotation block is {abs(det):.3e}")
    alpha = float(np.cbrt(det))
    R = M / alpha
    if project:
        R = project_to_so3(R)
    t = np.array([theta[6], theta[10], 1.0 - centroid @ theta[0:3]]) / alpha
    return alpha, Pose(R, t)


@dataclass(frozen=True)
class SolverOptions:
    refine: bool = True
    gn: Optional[object] = None  # GnOptions; None means defaults
    chunk_size: int = DEFAULT_CHUNK
    cond_limit: float = COND_LIMIT


@dataclass
class SolveReport:
    n: int
    sigma2_hat: float
    sigma2_raw: float
    roots: np.ndarray
    alpha: float
    pose_be: Pose
    cost_be: float
    cond_AtA: float
    cond_corrected: float
    pose_gn: Optional[Pose] = None
    cost_gn: Optional[float] = None
    gn_iterations: int = 0
    warnings: List[str] = field(default_factory=list)
    timing_ms: Dict[str, float] = field(default_factory=dict)

    @property
    def pose(self) -> Pose:
        """Final estimate: refined if refinement ran, otherwise closed form."""
        return self.pose_gn if self.pose_gn is not None else self.pose_be


class _Stage:
    """Tags CPnPError raised inside the block with a pipeline stage name."""

    def __init__(self, name: str, timing: Dict[str, float]):
        self.name = name
        self.timing = timing

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timing[self.name] = 1e3 * (time.perf_counter() - self.t0)
        if isinstance(exc, CPnPError) and exc.stage is None:
            exc.stage = self.name
        return False


def _depth_signs(pose: Pose, data: CorrespondenceSet, chunk_size: int) -> int:
    bad = 0
    for start in range(0, data.n, chunk_size):
        pc = pose.transform(data.points_world[start : start + chunk_size])
        bad += int(np.count_nonzero(pc[:, 2] <= DEPTH_EPSILON))
    return bad


def cpnp_solve(
    data: CorrespondenceSet,
    intrinsics: CameraIntrinsics,
    opts: Optional[SolverOptions] = None,
) -> SolveReport:
    """Full CPnP pipeline: closed-form bias-eliminated estimate, then GN.

    Raises the first CPnPError met, with ``stage`` set to the failing step.
    """
    from cpnp.gn import GnOptions, gn_refine

    opts = opts or SolverOptions()
    timing: Dict[str, float] = {}
    warnings: List[str] = []
    t_start = time.perf_counter()

    with _Stage("build_system", timing):
        _check_count(data)
        ne = accumulate_normal_equations(data, intrinsics, opts.chunk_size)
        cond_AtA = condition_number(ne.AtA)
        if not cond_AtA < opts.cond_limit:
            raise IllConditionedSystem(cond_AtA)
    with _Stage("estimate_noise_variance", timing):
        var = estimate_noise_variance(ne)
        if var.clamped:
            warnings.append(f"negative variance root {var.raw_min:.6g} clamped to 0")
    with _Stage("solve_bias_eliminated", timing):
        theta = solve_bias_eliminated(ne, var)
        cond_corr = condition_number(ne.AtA - var.sigma2_hat * ne.GtG)
    with _Stage("recover_pose", timing):
        alpha, pose_be = recover_pose(theta, ne.centroid, project=False)
        raw_R = pose_be.R
        try:
            pose_be = Pose(project_to_so3(raw_R), pose_be.t)
        except DegenerateMatrix as exc:
            raise DegenerateTheta(str(exc)) from None
        if alpha < 0:
            warnings.append("negative scale: points lie behind the camera (mirrored solution)")
        behind = _depth_signs(pose_be, data, opts.chunk_size)
        if behind:
            warnings.append(f"{behind} points have non-positive depth under the closed-form pose")

    cost_be = float("nan")
    if not behind:
        cost_be = reprojection_cost(pose_be, intrinsics, data, opts.chunk_size)

    report = SolveReport(
        n=data.n,
        sigma2_hat=var.sigma2_hat,
        sigma2_raw=var.raw_min,
        roots=var.roots,
        alpha=alpha,
        pose_be=pose_be,
        cost_be=cost_be,
        cond_AtA=cond_AtA,
        cond_corrected=cond_corr,
        warnings=warnings,
        timing_ms=timing,
    )

    if opts.refine and behind:
        warnings.append("GN refinement skipped: closed-form pose has points behind the camera")
    elif opts.refine:
        with _Stage("gn_refine", timing):
            gn_opts = opts.gn if opts.gn is not None else GnOptions()
            res = gn_refine(pose_be, intrinsics, data, gn_opts, chunk_size=opts.chunk_size)
        report.pose_gn = res.pose
        report.cost_gn = res.final_cost
        report.gn_iterations = res.iterations
        warnings.extend(res.warnings)

    timing["total"] = 1e3 * (time.perf_counter() - t_start)
    return report


def biased_solve(
    data: CorrespondenceSet, intrinsics: CameraIntrinsics, chunk_size: int = DEFAULT_CHUNK
) -> Pose:
    """Uncorrected baseline: OLS theta, recovered and projected onto SO(3)."""
    ne = accumulate_normal_equations(data, intrinsics, chunk_size)
    _, pose = recover_pose(solve_biased(ne), ne.centroid)
    return pose
