"""Text file formats read and written by the command-line tool.

Correspondences (CSV)::

    x,y,z,u,v
    0.12,-1.5,7.25,401.3,188.02
    ...

World coordinates in meters, raw image pixels (not centered).

Intrinsics (key=value, ``#`` starts a comment)::

    fx = 800
    fy = 800
    u0 = 320
    v0 = 240
    width = 640     # optional
    height = 480    # optional

Floats are written with ``repr``, the shortest string that round-trips to
the same double.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from cpnp.camera import CameraIntrinsics, CorrespondenceSet, Pose

PathLike = Union[str, os.PathLike]
CORRESPONDENCE_HEADER = ("x", "y", "z", "u", "v")
REQUIRED_INTRINSICS = ("fx", "fy", "u0", "v0")
OPTIONAL_INTRINSICS = ("width", "height")


class ParseError(ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


def fmt(x: float) -> str:
    return repr(float(x))


def atomic_write(path: PathLike, text: str) -> None:
    """Write ``text`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _float(path, line, text, name) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line, f"{name}: {text!r} is not a number") from None
    if not math.isfinite(v):
        raise ParseError(path, line, f"{name}: {text!r} is not finite")
    return v


def read_correspondences(path: PathLike) -> CorrespondenceSet:
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParseError(path, 1, "empty file, expected header x,y,z,u,v")
    header = tuple(c.strip().lower() for c in rows[0])
    if header != CORRESPONDENCE_HEADER:
        raise ParseError(path, 1, f"expected header x,y,z,u,v, got {','.join(rows[0])}")
    pts, pix = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise ParseError(path, lineno, f"expected 5 fields, got {len(row)}")
        vals = [_float(path, lineno, c.strip(), name) for c, name in zip(row, CORRESPONDENCE_HEADER)]
        pts.append(vals[:3])
        pix.append(vals[3:])
    return CorrespondenceSet(np.reshape(pts, (-1, 3)), np.reshape(pix, (-1, 2)))


def correspondences_text(data: CorrespondenceSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CORRESPONDENCE_HEADER)
    for p, q in zip(data.points_world, data.pixels):
        w.writerow([fmt(v) for v in (*p, *q)])
    return buf.getvalue()


def write_correspondences(path: PathLike, data: CorrespondenceSet) -> None:
    atomic_write(path, correspondences_text(data))


def read_intrinsics(path: PathLike) -> CameraIntrinsics:
    path = Path(path)
    values: Dict[str, float] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, _, val = line.partition(sep)
                    break
            else:
                parts = line.split()
                if len(parts) != 2:
                    raise ParseError(path, lineno, f"expected 'key = value', got {raw.strip()!r}")
                key, val = parts
            key = key.strip().lower()
            if key not in REQUIRED_INTRINSICS + OPTIONAL_INTRINSICS:
                raise ParseError(path, lineno, f"unknown key {key!r}")
            if key in values:
                raise ParseError(path, lineno, f"duplicate key {key!r}")
            values[key] = _float(path, lineno, val.strip(), key)
    missing = [k for k in REQUIRED_INTRINSICS if k not in values]
    if missing:
        raise ParseError(path, None, f"missing keys: {', '.join(missing)}")
    if values["fx"] <= 0 or values["fy"] <= 0:
        raise ParseError(path, None, "fx and fy must be positive")
    if values["u0"] < 0 or values["v0"] < 0:
        raise ParseError(path, None, "u0 and v0 must be non-negative")
    return CameraIntrinsics(
        values["fx"], values["fy"], values["u0"], values["v0"],
        values.get("width"), values.get("height"),
    )


def intrinsics_text(intr: CameraIntrinsics) -> str:
    lines = [f"fx = {fmt(intr.fx)}", f"fy = {fmt(intr.fy)}", f"u0 = {fmt(intr.u0)}",
             f"v0 = {fmt(intr.v0)}"]
    if intr.image_width is not None:
        lines.append(f"width = {fmt(intr.image_width)}")
    if intr.image_height is not None:
        lines.append(f"height = {fmt(intr.image_height)}")
    return "\n".join(lines) + "\n"


def write_intrinsics(path: PathLike, intr: CameraIntrinsics) -> None:
    atomic_write(path, intrinsics_text(intr))


def _finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def pose_to_dict(pose: Optional[Pose]) -> Optional[dict]:
    if pose is None:
        return None
    return {"R": [float(v) for v in pose.R.ravel()], "t": [float(v) for v in pose.t]}


def pose_from_dict(d: Optional[dict]) -> Optional[Pose]:
    if d is None:
        return None
    R = np.asarray(d["R"], dtype=float)
    t = np.asarray(d["t"], dtype=float)
    if R.size != 9 or t.size != 3:
        raise ValueError("pose needs 9 rotation entries and 3 translation entries")
    return Pose(R.reshape(3, 3), t)


def report_to_dict(report) -> dict:
    """JSON-ready view of a :class:`cpnp.core.SolveReport`."""
    return {
        "n": report.n,
        "sigma2_hat": report.sigma2_hat,
        "sigma2_raw": report.sigma2_raw,
        "alpha": report.alpha,
        "pose_be": pose_to_dict(report.pose_be),
        "pose_gn": pose_to_dict(report.pose_gn),
        "cost_be": _finite_or_none(report.cost_be),
        "cost_gn": _finite_or_none(report.cost_gn),
        "gn_iterations": report.gn_iterations,
        "condition_numbers": {
            "AtA": _finite_or_none(report.cond_AtA),
            "corrected": _finite_or_none(report.cond_corrected),
        },
        "variance_roots": [_finite_or_none(np.real(r)) for r in report.roots],
        "warnings": list(report.warnings),
        "timing_ms": {k: float(v) for k, v in report.timing_ms.items()},
    }


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_truth(path: PathLike, pose: Pose, sigma: float, seed: int, intr: CameraIntrinsics,
                n: int) -> None:
    doc = {
        "pose": pose_to_dict(pose),
        "sigma": float(sigma),
        "seed": int(seed),
        "n": int(n),
        "intrinsics": {"fx": intr.fx, "fy": intr.fy, "u0": intr.u0, "v0": intr.v0,
                       "width": intr.image_width, "height": intr.image_height},
    }
    atomic_write(path, dumps_json(doc))


def read_truth(path: PathLike) -> Tuple[Pose, dict]:
    with open(path) as f:
        doc = json.load(f)
    return pose_from_dict(doc["pose"]), doc


def sweep_csv_text(summary, timing: bool = True) -> str:
    """CSV rows for a :class:`cpnp.bench.SweepSummary`.

    With ``timing=False`` the runtime column is left empty, which makes the
    file a pure function of the sweep flags.
    """
    from cpnp.bench import CSV_COLUMNS

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in summary.cells:
        w.writerow([
            c.solver, c.n, fmt(c.sigma), fmt(c.rmse_R), fmt(c.rmse_t), fmt(c.mean_sigma2_hat),
            fmt(c.mean_runtime_s) if timing else "", c.trials, c.failures,
        ])
    return buf.getvalue()


def read_sweep_csv(path: PathLike):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def sweep_json(summary) -> dict:
    return {
        "trials": summary.trials,
        "base_seed": summary.base_seed,
        "slopes": [
            {"solver": solver, "sigma": sigma,
             "rmse_R": _finite_or_none(v["rmse_R"]), "rmse_t": _finite_or_none(v["rmse_t"])}
            for solver, by_sigma in summary.slopes.items()
            for sigma, v in sorted(by_sigma.items())
        ],
        "cells": [
            {"solver": c.solver, "n": c.n, "sigma": c.sigma, "rmse_R": _finite_or_none(c.rmse_R),
             "rmse_t": _finite_or_none(c.rmse_t),
             "mean_sigma2_hat": _finite_or_none(c.mean_sigma2_hat),
             "mean_runtime_s": _finite_or_none(c.mean_runtime_s), "trials": c.trials,
             "failures": c.failures, "flagged": c.flagged}
            for c in summary.cells
        ],
    }
