"""Command-line front end: ``abelrecon <subcommand> ...``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 I/O error.  Option precedence: command line, then ``--config`` JSON file,
then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import abelop, metrics, phantom, report
from .grid import (BeamMode, Field2D, GeometryError, GridFormatError, ImagingGeometry,
                   detector_grid, read_field, recon_grid, write_ablg, write_csv)
from .krylov import CGDivergence, estimate_opnorm_sq
from .solvers import (LAMBDA_SAFETY, NumericalFailure, SolverParams, reconstruct_l1l2,
                      reconstruct_tv)

log = logging.getLogger("abelrecon")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    # geometry: 700 x 350 half-plane over y in [-5, 5], r in [0, 5]
    "mode": "parallel",
    "z_source": 59.2,
    "z_detector": 70.3,
    "magnification": None,
    "pitch": 1.0 / 70.0,
    "rows": 700,
    "cols": 350,
    "half_detector": False,
    "threads": 1,
    "cache_dir": None,
    # solver
    "method": "l1l2",
    "lam": None,
    "rho1": None,
    "rho2": None,
    "rho3": None,
    "eps": 1e-7,
    "k_max": 30,
    "j_max": None,
    "alpha": 0.0,
    "beta": math.inf,
    "cg_tol": 1e-7,
    "cg_max_iter": 1000,
    "seed": 0,
    # phantom / evaluation
    "spec": "layered",
    "noise": 0.0,
    "projection": "auto",
    "block": 10,
    "cnr_threshold": 0.5,
    "dtheta": 0.25,
}


class ConfigError(ValueError):
    pass


def _add_geometry(p):
    g = p.add_argument_group("geometry")
    g.add_argument("--mode", choices=[m.value for m in BeamMode])
    g.add_argument("--z-source", type=float, help="source to object-centre distance (cm)")
    g.add_argument("--z-detector", type=float, help="object-centre to detector distance (cm)")
    g.add_argument("--magnification", type=float,
                   help="cone-beam magnification; overrides --z-detector")
    g.add_argument("--pitch", type=float, help="detector pixel pitch (cm)")
    g.add_argument("--rows", type=int, help="reconstruction rows (y)")
    g.add_argument("--cols", type=int, help="reconstruction columns (r)")
    g.add_argument("--half-detector", action="store_const", const=True,
                   help="detector covers x >= 0 only")
    g.add_argument("--threads", type=int, help="threads for operator assembly")
    g.add_argument("--cache-dir", help=f"operator cache directory (default ${abelop.CACHE_ENV})")


def _add_solver(p):
    s = p.add_argument_group("solver")
    s.add_argument("--method", choices=["l1l2", "tv"])
    s.add_argument("--lam", type=float, help="data weight (default 0.99/||A^T A||)")
    s.add_argument("--rho1", type=float)
    s.add_argument("--rho2", type=float)
    s.add_argument("--rho3", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--k-max", type=int)
    s.add_argument("--j-max", type=int)
    s.add_argument("--alpha", type=float, help="lower bound (default 0)")
    s.add_argument("--beta", type=float, help="upper bound (default inf)")
    s.add_argument("--cg-tol", type=float)
    s.add_argument("--cg-max-iter", type=int)
    s.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abelrecon",
        description="Single-view reconstruction of axially symmetric objects.")
    parser.add_argument("--config", help="JSON file of option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="render a phantom, its projection and a noisy copy")
    p.add_argument("--spec", help="spec file or bundled name (layered, desk)")
    p.add_argument("--noise", type=float, help="noise sigma as a fraction of max|projection|")
    p.add_argument("--seed", type=int)
    p.add_argument("--projection", choices=["auto", "analytic", "discrete"],
                   help="analytic (parallel only) or discrete operator projection")
    p.add_argument("--out-dir", required=True)
    _add_geometry(p)

    p = sub.add_parser("project", help="forward-project a reconstruction-grid field")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_geometry(p)

    p = sub.add_parser("reconstruct", help="reconstruct from a projection")
    p.add_argument("input", help="projection (ABLG, or CSV with --pitch)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", help="output file prefix (default: the method)")
    _add_geometry(p)
    _add_solver(p)

    p = sub.add_parser("evaluate", help="RMSE/SSIM of reconstructions against a ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--recon", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--block", type=int)
    p.add_argument("--cnr-data", help="projection whose two-class CNR is reported")
    p.add_argument("--cnr-threshold", type=float)
    p.add_argument("-o", "--output", help="CSV path (default stdout)")

    p = sub.add_parser("lineout", help="write one row or column of a field as CSV")
    p.add_argument("input")
    p.add_argument("--axis", choices=["row", "col"], default="row",
                   help="row: fixed y, varying r/x; col: fixed r/x, varying y")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--index", type=int)
    grp.add_argument("--at", type=float, help="physical coordinate of the row/column (cm)")
    p.add_argument("-o", "--output", help="CSV path (default stdout)")

    p = sub.add_parser("export-sinogram", help="replicate a projection over 180 degrees")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help=".npy path (a .json sidecar is written)")
    p.add_argument("--dtheta", type=float, help="angular step in degrees (default 0.25)")
    p.add_argument("--float64", action="store_true")

    p = sub.add_parser("info", help="geometry, operator and file summary")
    p.add_argument("input", nargs="?", help="optional ABLG file to describe")
    p.add_argument("--operator", action="store_true", help="assemble A and report its norm")
    _add_geometry(p)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge CLI values over config-file values over :data:`DEFAULTS`."""
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
    out = dict(DEFAULTS)
    out.update(cfg)
    for key, val in vars(args).items():
        if val is not None:
            out[key] = val
    if isinstance(out.get("beta"), str):
        out["beta"] = float(out["beta"])
    return out


def make_geometry(cfg: dict) -> ImagingGeometry:
    mode = BeamMode(cfg["mode"])
    if mode is BeamMode.CONE and cfg.get("magnification") is not None:
        return ImagingGeometry.cone_from_magnification(cfg["magnification"], cfg["z_source"], cfg["pitch"])
    return ImagingGeometry(cfg["z_source"], cfg["z_detector"], cfg["pitch"], mode)


def grids_for_detector(det: Field2D, geom: ImagingGeometry, cfg: dict, explicit: set):
    """Reconstruction grid implied by a detector field; explicit --rows/--cols must agree."""
    full = det.origin_col < 0
    if full and det.cols % 2:
        raise GeometryError("full detector must have an even number of columns")
    rows, cols = det.rows, det.cols // 2 if full else det.cols
    if full and not np.isclose(det.origin_col, -cols * det.spacing_col, rtol=1e-9, atol=1e-12):
        raise GeometryError("full detector is not centred on x = 0")
    if "rows" in explicit and cfg["rows"] != rows:
        raise GeometryError(f"--rows {cfg['rows']} does not match detector rows {rows}")
    if "cols" in explicit and cfg["cols"] != cols:
        raise GeometryError(f"--cols {cfg['cols']} does not match detector ({cols} radial cells)")
    if "pitch" in explicit and not np.isclose(cfg["pitch"], det.spacing_col, rtol=1e-9):
        raise GeometryError(f"--pitch {cfg['pitch']} does not match detector pitch {det.spacing_col}")
    xi = geom.magnification
    recon = Field2D(np.zeros((rows, cols)), det.spacing_row / xi, det.spacing_col / xi,
                    det.origin_row / xi, 0.0)
    return recon


def _operator(geom, recon, det, cfg):
    return abelop.cached_operator(geom, recon, det, cache_dir=cfg.get("cache_dir"),
                                  threads=int(cfg.get("threads") or 1))


def cmd_phantom(cfg, explicit) -> int:
    geom = make_geometry(cfg)
    spec_arg = cfg["spec"]
    spec = phantom.load_spec(spec_arg) if Path(spec_arg).exists() else phantom.bundled_spec(spec_arg)
    recon = recon_grid(cfg["rows"], cfg["cols"], geom)
    det = detector_grid(cfg["rows"], cfg["cols"], geom, half=bool(cfg["half_detector"]))
    truth = phantom.render(spec, recon)
    method = cfg["projection"]
    if method == "auto":
        method = "analytic" if geom.mode is BeamMode.PARALLEL else "discrete"
    if method == "analytic":
        if geom.mode is not BeamMode.PARALLEL:
            raise ConfigError("analytic projections exist only for parallel beams")
        proj = phantom.render_projection(spec, det)
    else:
        proj = abelop.apply(_operator(geom, recon, det, cfg), truth)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = {"truth": truth, "projection": proj}
    if cfg["noise"] > 0:
        outputs["projection_noisy"] = phantom.add_noise(proj, cfg["noise"], cfg["seed"])
    for name, f in outputs.items():
        write_ablg(out / f"{name}.ablg", f)
        report.write_pgm16(out / f"{name}.pgm", f)
        log.info("wrote %s", out / f"{name}.ablg")
    report.write_json(out / "phantom_meta.json", {
        "spec": spec_arg, "noise": cfg["noise"], "seed": cfg["seed"], "projection": method,
        "mode": geom.mode.value, "magnification": geom.magnification,
        "rows": cfg["rows"], "cols": cfg["cols"], "pitch": geom.detector_pitch,
        "half_detector": bool(cfg["half_detector"])})
    return EXIT_OK


def cmd_project(cfg, explicit) -> int:
    geom = make_geometry(cfg)
    if _is_csv(cfg["input"]):
        values = np.loadtxt(cfg["input"], delimiter=",", ndmin=2)
        recon = recon_grid(*values.shape, geom)
        u = recon.with_values(values)
    else:
        u = read_field(cfg["input"])
        recon = recon_grid(*u.shape, geom)
        if not recon.same_grid(u.zeros_like(), rtol=1e-9):
            raise GeometryError("input field grid does not match the geometry's reconstruction grid")
    rows, cols = u.shape
    det = detector_grid(rows, cols, geom, half=bool(cfg["half_detector"]))
    d = abelop.apply(_operator(geom, recon, det, cfg), recon.with_values(u.values))
    _write_field(cfg["output"], d)
    return EXIT_OK


def _write_field(path, f):
    if str(path).lower().endswith(".csv"):
        write_csv(path, f)
    else:
        write_ablg(path, f)


def solver_params(cfg) -> SolverParams:
    keys = ("lam", "rho1", "rho2", "rho3", "eps", "k_max", "j_max", "alpha", "beta",
            "cg_tol", "cg_max_iter", "seed")
    return SolverParams(**{k: cfg[k] for k in keys})


def cmd_reconstruct(cfg, explicit) -> int:
    geom = make_geometry(cfg)
    d = _read_detector(cfg)
    recon = grids_for_detector(d, geom, cfg, explicit)
    params = solver_params(cfg)
    A = _operator(geom, recon, d.zeros_like(), cfg)
    solve = reconstruct_l1l2 if cfg["method"] == "l1l2" else reconstruct_tv
    result = solve(A, d, params)
    log.info("%s: %d iterations, converged=%s", cfg["method"], result.outer_iters, result.converged)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg.get("prefix") or cfg["method"]
    write_ablg(out / f"{prefix}.ablg", result.u)
    report.write_pgm16(out / f"{prefix}.pgm", result.u)
    report.write_history_csv(out / f"{prefix}_history.csv", result)
    report.write_json(out / f"{prefix}_meta.json", report.run_metadata(
        result, input=str(cfg["input"]), mode=geom.mode.value,
        magnification=geom.magnification, recon_shape=list(recon.shape),
        detector_shape=list(d.shape)))
    return EXIT_OK


def _is_csv(path) -> bool:
    return str(path).lower().endswith(".csv")


def _read_detector(cfg) -> Field2D:
    if not _is_csv(cfg["input"]):
        return read_field(cfg["input"])
    # CSV carries no grid metadata: a centred detector at --pitch, full
    # width unless --half-detector
    values = np.loadtxt(cfg["input"], delimiter=",", ndmin=2)
    dx = cfg["pitch"]
    rows, cols = values.shape
    origin_col = 0.0 if cfg["half_detector"] else -0.5 * cols * dx
    return Field2D(values, dx, dx, -0.5 * rows * dx, origin_col)


def cmd_evaluate(cfg, explicit) -> int:
    truth = read_field(cfg["truth"])
    rows = []
    for item in cfg["recon"]:
        if "=" not in item:
            raise ConfigError(f"--recon expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        u = read_field(path)
        rows.append((name, metrics.evaluate(u, truth, cfg["block"])))
    dest = cfg.get("output")
    if dest:
        report.write_metrics_csv(dest, rows)
    else:
        print("method,rmse,ssim")
        for name, rep in rows:
            print(f"{name},{rep.rmse!r},{rep.ssim!r}")
    if cfg.get("cnr_data"):
        value = metrics.cnr(read_field(cfg["cnr_data"]), cfg["cnr_threshold"])
        print(f"cnr,{value!r}", file=sys.stderr if not dest else sys.stdout)
    return EXIT_OK


def cmd_lineout(cfg, explicit) -> int:
    f = read_field(cfg["input"])
    if cfg["axis"] == "row":
        centers, along, name = f.row_centers(), f.col_centers(), "r_or_x"
        spacing, origin, n = f.spacing_row, f.origin_row, f.rows
    else:
        centers, along, name = f.col_centers(), f.row_centers(), "y"
        spacing, origin, n = f.spacing_col, f.origin_col, f.cols
    if cfg.get("index") is not None:
        idx = cfg["index"]
    else:
        idx = int(math.floor((cfg["at"] - origin) / spacing))
    if not 0 <= idx < n:
        raise ConfigError(f"lineout index {idx} outside [0, {n})")
    values = f.values[idx, :] if cfg["axis"] == "row" else f.values[:, idx]
    log.info("lineout at %s = %g", "y" if cfg["axis"] == "row" else "r", centers[idx])
    dest = cfg.get("output") or sys.stdout
    if dest is sys.stdout:
        print(f"{name},value")
        for c, v in zip(along, values):
            print(f"{float(c)!r},{float(v)!r}")
    else:
        report.write_lineout_csv(dest, along, values, name)
    return EXIT_OK


def cmd_export_sinogram(cfg, explicit) -> int:
    d = read_field(cfg["input"])
    dtype = np.float64 if cfg.get("float64") else np.float32
    path = abelop.export_sinogram(d, cfg["output"], cfg["dtheta"], dtype=dtype)
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_info(cfg, explicit) -> int:
    geom = make_geometry(cfg)
    lines = [
        f"mode            {geom.mode.value}",
        f"magnification   {geom.magnification!r}",
        f"detector pitch  {geom.detector_pitch!r} cm",
        f"recon pitch     {geom.recon_pitch!r} cm",
    ]
    if cfg.get("input"):
        f = read_field(cfg["input"])
        lines += [
            f"file            {cfg['input']}",
            f"shape           {f.rows} x {f.cols}",
            f"spacing         {f.spacing_row!r} x {f.spacing_col!r} cm",
            f"origin          ({f.origin_row!r}, {f.origin_col!r}) cm",
            f"range           [{f.values.min()!r}, {f.values.max()!r}]",
        ]
    if cfg.get("operator"):
        recon = recon_grid(cfg["rows"], cfg["cols"], geom)
        det = detector_grid(cfg["rows"], cfg["cols"], geom, half=bool(cfg["half_detector"]))
        A = _operator(geom, recon, det, cfg)
        norm = estimate_opnorm_sq(A, seed=cfg["seed"])
        coverage = A.column_coverage()
        lines += [
            f"operator        {A.n_rows} x {A.n_cols}, nnz {A.nnz}",
            f"||A^T A||       {norm!r}",
            f"auto lambda     {LAMBDA_SAFETY / norm!r}",
            f"cells unseen    {int(np.sum(coverage == 0))}",
            f"cache key       {abelop.geometry_key(geom, recon, det)}",
        ]
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "lineout": cmd_lineout,
    "export-sinogram": cmd_export_sinogram,
    "info": cmd_info,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    explicit = {k for k, v in vars(args).items() if v is not None}
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, explicit)
    except (NumericalFailure, CGDivergence, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, GridFormatError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
