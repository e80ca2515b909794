"""Delimited and preview outputs: history/metric/lineout CSVs, run metadata, 16-bit PGM."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .grid import Field2D


def _fmt(x) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))


def write_pgm16(path, f: Field2D) -> None:
    """Min-max windowed 16-bit binary PGM preview (row 0 at the top)."""
    vals = f.values
    lo, hi = float(vals.min()), float(vals.max())
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    img = np.round((vals - lo) * scale).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.cols} {f.rows}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm16(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    cols, rows = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(rows, cols)


HISTORY_COLUMNS = ("k", "objective", "residual", "h_norm", "rel_change")


def write_history_csv(path, result) -> None:
    """One row per completed iteration; the zero start point lives in the run metadata."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for k, obj, res, hn, rel in result.history_rows()[1:]:
            w.writerow([k, _fmt(obj), _fmt(res), _fmt(hn), _fmt(rel)])


def write_metrics_csv(path, rows) -> None:
    """``rows`` is a sequence of ``(method, MetricReport)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("method", "rmse", "ssim"))
        for name, rep in rows:
            w.writerow([name, _fmt(rep.rmse), _fmt(rep.ssim)])


def write_lineout_csv(path, coords, values, coord_name: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((coord_name, "value"))
        for c, v in zip(coords, values):
            w.writerow([_fmt(c), _fmt(v)])


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def run_metadata(result, **extra) -> dict:
    meta = {
        "version": __version__,
        "method": result.method,
        "params": dataclasses.asdict(result.params),
        "seed": result.seed,
        "outer_iters": result.outer_iters,
        "total_inner_iters": result.total_inner_iters,
        "total_cg_iters": result.total_cg_iters,
        "converged": result.converged,
        "h_norm_min": result.h_norm_min,
        "tv_split_gap": result.tv_split_gap,
        "box_split_gap": result.box_split_gap,
        "fallback_count": result.fallback_count,
        "initial_objective": result.objective_history[0],
        "initial_residual": result.residual_history[0],
        "final_objective": result.objective_history[-1],
        "final_residual": result.residual_history[-1],
    }
    meta.update(extra)
    return _jsonable(meta)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
