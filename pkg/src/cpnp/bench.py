"""Seeded Monte Carlo sweeps over (n, sigma).

Every trial draws one synthetic scene and runs three estimators on the same
correspondences:

* ``biased_ls``: plain least squares on the eliminated system,
* ``cpnp``: the bias-eliminated closed form,
* ``cpnp_gn``: the closed form followed by Gauss-Newton refinement.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from cpnp.core import SolverOptions, biased_solve, cpnp_solve
from cpnp.errors import CPnPError, EmptyInput
from cpnp.gn import GnOptions, gn_refine
from cpnp.synthetic import ScenarioConfig, generate_scene

SOLVERS = ("biased_ls", "cpnp", "cpnp_gn")
FAILURE_FLAG_FRACTION = 0.05
CSV_COLUMNS = (
    "solver",
    "n",
    "sigma",
    "rmse_R",
    "rmse_t",
    "mean_sigma2_hat",
    "mean_runtime_s",
    "trials",
    "failures",
)


def rmse(errors: Iterable[float]) -> float:
    """Root of the mean of squared errors."""
    e = np.asarray(list(errors), dtype=float)
    if e.size == 0:
        raise EmptyInput("rmse of an empty list")
    return float(np.sqrt(np.mean(e**2)))


def trial_seed(base_seed: int, n: int, sigma: float, trial: int) -> int:
    """Independent per-trial seed derived from the cell coordinates."""
    sigma_key = int(round(float(sigma) * 1_000_000))
    ss = np.random.SeedSequence([int(base_seed), int(n), sigma_key, int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SolverOutcome:
    rotation_error: float  # Frobenius norm of R_hat - R_true
    translation_error: float  # Euclidean norm of t_hat - t_true
    sigma2_hat: float
    seconds: float


@dataclass
class TrialResult:
    n: int
    sigma: float
    trial: int
    seed: int
    config_hash: str
    outcomes: Dict[str, SolverOutcome] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)


def run_trial(cfg: ScenarioConfig, trial: int = 0, gn: Optional[GnOptions] = None) -> TrialResult:
    truth, data = generate_scene(cfg)
    intr = cfg.intrinsics
    result = TrialResult(
        n=cfg.n_points,
        sigma=cfg.sigma_pixels,
        trial=trial,
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
    )

    def outcome(pose, s2, secs):
        return SolverOutcome(
            rotation_error=float(np.linalg.norm(pose.R - truth.R)),
            translation_error=float(np.linalg.norm(pose.t - truth.t)),
            sigma2_hat=s2,
            seconds=secs,
        )

    t0 = time.perf_counter()
    try:
        pose = biased_solve(data, intr)
        result.outcomes["biased_ls"] = outcome(pose, math.nan, time.perf_counter() - t0)
    except CPnPError as exc:
        result.errors["biased_ls"] = str(exc)

    t0 = time.perf_counter()
    try:
        report = cpnp_solve(data, intr, SolverOptions(refine=False))
    except CPnPError as exc:
        result.errors["cpnp"] = result.errors["cpnp_gn"] = str(exc)
        return result
    t_be = time.perf_counter() - t0
    result.outcomes["cpnp"] = outcome(report.pose_be, report.sigma2_hat, t_be)

    t0 = time.perf_counter()
    try:
        refined = gn_refine(report.pose_be, intr, data, gn or GnOptions())
        t_gn = time.perf_counter() - t0
        result.outcomes["cpnp_gn"] = outcome(refined.pose, report.sigma2_hat, t_be + t_gn)
    except CPnPError as exc:
        result.errors["cpnp_gn"] = str(exc)
    return result


def _run_cell_trial(args) -> TrialResult:
    cfg, trial = args
    return run_trial(cfg, trial)


@dataclass(frozen=True)
class CellSummary:
    solver: str
    n: int
    sigma: float
    rmse_R: float
    rmse_t: float
    mean_sigma2_hat: float
    mean_runtime_s: float
    trials: int
    failures: int

    @property
    def flagged(self) -> bool:
        return self.failures > FAILURE_FLAG_FRACTION * self.trials


@dataclass
class SweepSummary:
    cells: List[CellSummary]
    # slopes[solver][sigma] = {"rmse_R": ..., "rmse_t": ...}
    slopes: Dict[str, Dict[float, Dict[str, float]]]
    trials: int
    base_seed: int

    def cell(self, solver: str, n: int, sigma: float) -> CellSummary:
        for c in self.cells:
            if c.solver == solver and c.n == n and c.sigma == sigma:
                return c
        raise KeyError((solver, n, sigma))

    @property
    def all_failed(self) -> bool:
        return all(c.failures == c.trials for c in self.cells)


def loglog_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    """OLS slope of log(value) against log(n)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    ok = np.isfinite(y)
    if np.count_nonzero(ok) < 2 or np.ptp(x[ok]) == 0:
        return math.nan
    return float(np.polyfit(x[ok], y[ok], 1)[0])


def summarize(results: Sequence[TrialResult], grid: Sequence[Tuple[int, float]], trials: int,
              base_seed: int) -> SweepSummary:
    by_cell: Dict[Tuple[int, float], List[TrialResult]] = {}
    for r in results:
        by_cell.setdefault((r.n, r.sigma), []).append(r)

    cells = []
    for n, sigma in grid:
        rows = sorted(by_cell.get((n, float(sigma)), []), key=lambda r: r.trial)
        for solver in SOLVERS:
            outs = [r.outcomes[solver] for r in rows if solver in r.outcomes]
            failures = trials - len(outs)
            if outs:
                s2 = [o.sigma2_hat for o in outs]
                cells.append(CellSummary(
                    solver=solver,
                    n=int(n),
                    sigma=float(sigma),
                    rmse_R=rmse(o.rotation_error for o in outs),
                    rmse_t=rmse(o.translation_error for o in outs),
                    mean_sigma2_hat=float(np.mean(s2)) if np.all(np.isfinite(s2)) else math.nan,
                    mean_runtime_s=float(np.mean([o.seconds for o in outs])),
                    trials=trials,
                    failures=failures,
                ))
            else:
                cells.append(CellSummary(solver, int(n), float(sigma), math.nan, math.nan,
                                         math.nan, math.nan, trials, failures))

    slopes: Dict[str, Dict[float, Dict[str, float]]] = {}
    for solver in SOLVERS:
        for sigma in sorted({float(s) for _, s in grid}):
            group = sorted((c for c in cells if c.solver == solver and c.sigma == sigma),
                           key=lambda c: c.n)
            if len({c.n for c in group}) < 2:
                continue
            ns = [c.n for c in group]
            slopes.setdefault(solver, {})[sigma] = {
                "rmse_R": loglog_slope(ns, [c.rmse_R for c in group]),
                "rmse_t": loglog_slope(ns, [c.rmse_t for c in group]),
            }
    return SweepSummary(cells=cells, slopes=slopes, trials=trials, base_seed=base_seed)


def run_sweep(
    grid: Sequence[Tuple[int, float]],
    trials: int = 100,
    base_seed: int = 0,
    workers: int = 1,
    base_config: Optional[ScenarioConfig] = None,
) -> SweepSummary:
    """Run ``trials`` seeded trials in every (n, sigma) cell and aggregate.

    Results do not depend on ``workers``: each trial has its own seed and
    aggregation happens in trial order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = [(int(n), float(s)) for n, s in grid]
    base = base_config or ScenarioConfig()
    jobs = []
    for n, sigma in grid:
        for t in range(trials):
            seed = trial_seed(base_seed, n, sigma, t)
            cfg = replace(base, n_points=n, sigma_pixels=sigma, seed=seed)
            jobs.append((cfg, t))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_trial, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_cell_trial(j) for j in jobs]
    return summarize(results, grid, trials, base_seed)


def parse_grid(text: str) -> List[Tuple[int, float]]:
    """Parse ``"n=200,800;sigma=2,5"`` into the cartesian product of cells."""
    values: Dict[str, List[str]] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"grid term {part!r} is not of the form key=v1,v2")
        key, _, vals = part.partition("=")
        key = key.strip().lower()
        if key not in ("n", "sigma"):
            raise ValueError(f"unknown grid key {key!r}; expected 'n' or 'sigma'")
        items = [v.strip() for v in vals.split(",") if v.strip()]
        if not items:
            raise ValueError(f"grid key {key!r} has no values")
        values[key] = items
    if "n" not in values or "sigma" not in values:
        raise ValueError("grid must define both n and sigma")
    ns = [int(v) for v in values["n"]]
    sigmas = [float(v) for v in values["sigma"]]
    if any(n < 6 for n in ns):
        raise ValueError("every n must be >= 6")
    if any(not (s >= 0 and math.isfinite(s)) for s in sigmas):
        raise ValueError("every sigma must be finite and >= 0")
    return [(n, s) for s in sigmas for n in ns]
