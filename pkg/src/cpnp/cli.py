"""``cpnp`` command-line tool.

Subcommands::

    cpnp solve CORRESPONDENCES INTRINSICS [--out REPORT] [--no-gn]
    cpnp gen --n N --sigma S --seed K --out DATA.csv
    cpnp bench --grid "n=200,800;sigma=2,5" --trials T --seed K --out DIR

Exit codes: 0 success, 1 bad input (flags, files, parse errors),
2 numerical or solver failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from cpnp import fileio
from cpnp.bench import SOLVERS, parse_grid, run_sweep
from cpnp.core import SolverOptions, cpnp_solve
from cpnp.errors import CPnPError
from cpnp.gn import GnOptions
from cpnp.synthetic import ScenarioConfig, generate_scene

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; 2 is reserved for solver errors
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _triple(text: str) -> List[float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number in {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpnp", description="Consistent PnP pose estimation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("solve", help="estimate a pose from a correspondence file")
    p.add_argument("correspondences", help="CSV with header x,y,z,u,v")
    p.add_argument("intrinsics", help="key=value file with fx, fy, u0, v0")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--no-gn", action="store_true", help="skip Gauss-Newton refinement")
    p.add_argument("--max-iters", type=int, default=GnOptions.max_iters)
    p.add_argument("--seed", type=int, help="ignored; the solver is deterministic")

    p = sub.add_parser("gen", help="generate a synthetic correspondence file")
    p.add_argument("--n", type=int, required=True, help="number of visible points")
    p.add_argument("--sigma", type=float, default=0.0, help="pixel noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="correspondence CSV to write")
    p.add_argument("--truth", help="truth sidecar path (default: <out stem>.truth.json)")
    p.add_argument("--intrinsics-out",
                   help="intrinsics file path (default: <out stem>.intrinsics.txt)")
    p.add_argument("--fx", type=float, default=ScenarioConfig.fx)
    p.add_argument("--fy", type=float, default=ScenarioConfig.fy)
    p.add_argument("--u0", type=float, default=ScenarioConfig.u0)
    p.add_argument("--v0", type=float, default=ScenarioConfig.v0)
    p.add_argument("--width", type=float, default=ScenarioConfig.image_width)
    p.add_argument("--height", type=float, default=ScenarioConfig.image_height)
    p.add_argument("--euler", type=_triple, help="camera Euler angles in radians, 'a,b,c'")
    p.add_argument("--translation", type=_triple, help="world-to-camera translation, 'x,y,z'")

    p = sub.add_parser("bench", help="run a Monte Carlo sweep")
    p.add_argument("--grid", required=True, help="e.g. 'n=200,800,3200;sigma=2,5,10,20'")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="fill the CSV runtime column (makes the CSV run-dependent)")
    return parser


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def cmd_solve(args) -> int:
    try:
        data = fileio.read_correspondences(args.correspondences)
        intr = fileio.read_intrinsics(args.intrinsics)
    except (OSError, ValueError) as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.max_iters < 1:
        print("error [input]: --max-iters must be >= 1", file=sys.stderr)
        return EXIT_INPUT

    opts = SolverOptions(refine=not args.no_gn, gn=GnOptions(max_iters=args.max_iters))
    try:
        report = cpnp_solve(data, intr, opts)
    except CPnPError as exc:
        print(f"error [{exc.stage or 'solve'}]: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    text = fileio.dumps_json(fileio.report_to_dict(report))
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        try:
            fileio.atomic_write(args.out, text)
        except OSError as exc:
            print(f"error [output]: {exc}", file=sys.stderr)
            return EXIT_INPUT
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen(args) -> int:
    overrides = {}
    if args.euler is not None:
        overrides["euler_angles"] = tuple(args.euler)
    if args.translation is not None:
        overrides["translation"] = tuple(args.translation)
    try:
        cfg = ScenarioConfig(
            n_points=args.n, sigma_pixels=args.sigma, seed=args.seed, fx=args.fx, fy=args.fy,
            u0=args.u0, v0=args.v0, image_width=args.width, image_height=args.height,
            **overrides,
        )
        truth, data = generate_scene(cfg)
    except (ValueError, CPnPError) as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    truth_path = Path(args.truth) if args.truth else _sidecar(out, ".truth.json")
    intr_path = Path(args.intrinsics_out) if args.intrinsics_out else _sidecar(out, ".intrinsics.txt")
    try:
        fileio.write_correspondences(out, data)
        fileio.write_truth(truth_path, truth, cfg.sigma_pixels, cfg.seed, cfg.intrinsics, data.n)
        fileio.write_intrinsics(intr_path, cfg.intrinsics)
    except OSError as exc:
        print(f"error [output]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def _slope_table(summary) -> str:
    lines = [f"{'solver':<10} {'sigma':>8} {'slope_R':>9} {'slope_t':>9}"]
    for solver in SOLVERS:
        for sigma, v in sorted(summary.slopes.get(solver, {}).items()):
            lines.append(f"{solver:<10} {sigma:>8g} {v['rmse_R']:>9.4f} {v['rmse_t']:>9.4f}")
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        print(f"error [input]: --grid: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.trials < 1 or args.workers < 1:
        print("error [input]: --trials and --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT

    summary = run_sweep(grid, trials=args.trials, base_seed=args.seed, workers=args.workers)
    out = Path(args.out)
    try:
        fileio.atomic_write(out / "sweep.csv", fileio.sweep_csv_text(summary, timing=args.timing))
        fileio.atomic_write(out / "slopes.json", fileio.dumps_json(fileio.sweep_json(summary)))
    except OSError as exc:
        print(f"error [output]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(_slope_table(summary))
    for c in summary.cells:
        if c.flagged:
            print(f"warning: {c.solver} n={c.n} sigma={c.sigma:g}: {c.failures}/{c.trials} "
                  "trials failed", file=sys.stderr)
    if summary.all_failed:
        print("error [bench]: every cell failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "gen": cmd_gen, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
