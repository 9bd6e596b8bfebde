"""Consistent Perspective-n-Point pose estimation.

Typical use::

    from cpnp import CameraIntrinsics, CorrespondenceSet, cpnp_solve

    report = cpnp_solve(CorrespondenceSet(points_world, pixels), CameraIntrinsics(800, 800, 320, 240))
    R, t = report.pose.R, report.pose.t
"""

from cpnp.camera import (
    CameraIntrinsics,
    CorrespondenceSet,
    Pose,
    centered_projection,
    hat,
    project,
    project_to_so3,
    reprojection_cost,
    so3_exp,
)
from cpnp.core import (
    LinearSystem,
    NormalEquations,
    SolveReport,
    SolverOptions,
    VarianceEstimate,
    accumulate_normal_equations,
    biased_solve,
    build_system,
    cpnp_solve,
    estimate_noise_variance,
    recover_pose,
    solve_bias_eliminated,
    solve_biased,
    stack_theta,
)
from cpnp.errors import CPnPError
from cpnp.gn import GnOptions, gn_refine, jacobian, psi_matrix

__version__ = "0.1.0"

__all__ = [
    "CPnPError",
    "CameraIntrinsics",
    "CorrespondenceSet",
    "GnOptions",
    "LinearSystem",
    "NormalEquations",
    "Pose",
    "SolveReport",
    "SolverOptions",
    "VarianceEstimate",
    "accumulate_normal_equations",
    "biased_solve",
    "build_system",
    "centered_projection",
    "cpnp_solve",
    "estimate_noise_variance",
    "gn_refine",
    "hat",
    "jacobian",
    "project",
    "project_to_so3",
    "psi_matrix",
    "recover_pose",
    "reprojection_cost",
    "so3_exp",
    "solve_bias_eliminated",
    "solve_biased",
    "stack_theta",
]
