"""Single-view projection operator for axially symmetric objects.

Each reconstruction cell ``(i', j')`` is an annular ring
``[r_j', r_j'+1] x [y_i', y_i'+1]`` around the ``y`` axis; the matrix entry for
detector pixel ``(i, j)`` is the length of that pixel's ray inside the ring
(onion-peeling discretisation).  Parallel beams give the classic Abel chord
matrix; cone beams trace rays from a point source, so a ray can cross
several ``y`` slabs.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .grid import BeamMode, Field2D, GeometryError, ImagingGeometry, magnification

CACHE_ENV = "ABELRECON_CACHE_DIR"


@dataclass(frozen=True)
class Ray:
    """Line ``source + t * direction`` for ``t`` in ``[t_min, t_max]``."""

    source: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if not np.any(d):
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "source", np.asarray(self.source, dtype=float))
        object.__setattr__(self, "direction", d)


def ray_for_pixel(geom: ImagingGeometry, x: float, y: float) -> Ray:
    """Ray hitting detector pixel centre ``(x, y)``.

    Cone beam: the segment from the source ``(0, 0, -z_S)`` to ``(x, y, z_D)``.
    Parallel beam: the infinite line ``{x, y fixed}`` along ``z``.
    """
    if geom.mode is BeamMode.CONE:
        zs, zd = abs(geom.z_source), abs(geom.z_detector)
        return Ray(np.array([0.0, 0.0, -zs]), np.array([x, y, zd + zs], dtype=float))
    return Ray(np.array([x, y, 0.0]), np.array([0.0, 0.0, 1.0]), -np.inf, np.inf)


def _slab_window(sy, dy, y_lo, y_hi, t_min, t_max):
    """Parameter interval where ``y(t) = sy + t*dy`` lies in ``[y_lo, y_hi)``."""
    if dy == 0.0:
        if y_lo <= sy < y_hi:
            return t_min, t_max
        return 0.0, 0.0
    ta, tb = (y_lo - sy) / dy, (y_hi - sy) / dy
    if ta > tb:
        ta, tb = tb, ta
    return max(ta, t_min), min(tb, t_max)


def _cylinder_halfwidth(radius, rmin2, a):
    # tangent rays give R^2 - rmin^2 ~ -eps; clamp to a zero-length chord
    return np.sqrt(np.maximum(np.square(radius) - rmin2, 0.0) / a)


def ray_shell_length(ray: Ray, r_in: float, r_out: float, y_lo: float, y_hi: float) -> float:
    """Length of ``ray`` inside ``{r_in <= sqrt(x^2+z^2) <= r_out, y_lo <= y < y_hi}``."""
    if not 0 <= r_in <= r_out:
        raise ValueError(f"need 0 <= r_in <= r_out, got {r_in}, {r_out}")
    if not y_lo < y_hi:
        raise ValueError(f"need y_lo < y_hi, got {y_lo}, {y_hi}")
    if r_in == r_out:
        return 0.0
    sx, sy, sz = ray.source
    dx, dy, dz = ray.direction
    wlo, whi = _slab_window(sy, dy, y_lo, y_hi, ray.t_min, ray.t_max)
    if whi <= wlo:
        return 0.0
    a = dx * dx + dz * dz
    if a == 0.0:
        # ray parallel to the symmetry axis: constant radius
        rr = np.hypot(sx, sz)
        inside = r_in <= rr <= r_out
        return float(np.linalg.norm(ray.direction) * (whi - wlo)) if inside else 0.0
    t0 = -(sx * dx + sz * dz) / a
    rmin2 = (sx + t0 * dx) ** 2 + (sz + t0 * dz) ** 2
    meas = []
    for radius in (r_in, r_out):
        h = _cylinder_halfwidth(radius, rmin2, a)
        meas.append(max(0.0, min(t0 + h, whi) - max(t0 - h, wlo)))
    return float(np.linalg.norm(ray.direction) * (meas[1] - meas[0]))


@dataclass(frozen=True)
class SparseOperator:
    """Projection matrix in CSR layout plus the grids it maps between.

    Rows index detector pixels (row-major over ``detector``), columns index
    reconstruction cells (row-major over ``recon``).
    """

    matrix: sp.csr_matrix
    recon: Field2D
    detector: Field2D

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.T @ y

    def column_coverage(self) -> np.ndarray:
        """Diagonal of ``A^T A``; strictly positive iff every cell is seen by a ray."""
        return np.asarray(self.matrix.multiply(self.matrix).sum(axis=0)).ravel()


def _row_rays(geom, xs, y):
    """Vectorised ray parameters for one detector row."""
    if geom.mode is BeamMode.CONE:
        zs, zd = abs(geom.z_source), abs(geom.z_detector)
        length = zs + zd
        a = xs * xs + length * length
        t0 = zs * length / a
        rmin2 = (zs * xs) ** 2 / a
        norm = np.sqrt(a + y * y)
        return a, t0, rmin2, norm, 0.0, float(y), 0.0, 1.0
    ones = np.ones_like(xs)
    return ones, np.zeros_like(xs), xs * xs, ones, float(y), 0.0, -np.inf, np.inf


def _assemble_row(geom, xs, y, r_edges, y_edges):
    a, t0, rmin2, norm, sy, dy, t_min, t_max = _row_rays(geom, xs, y)
    h = _cylinder_halfwidth(r_edges[None, :], rmin2[:, None], a[:, None])
    lo = t0[:, None] - h
    hi = t0[:, None] + h
    nr = len(r_edges) - 1

    outer = h[:, -1] > 0
    if not np.any(outer):
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    t_first = max(lo[outer, -1].min(), t_min)
    t_last = min(hi[outer, -1].max(), t_max)
    if dy == 0.0:
        k = np.searchsorted(y_edges, sy, side="right") - 1
        slabs = [k] if 0 <= k < len(y_edges) - 1 else []
    else:
        y_a, y_b = sorted((sy + t_first * dy, sy + t_last * dy))
        slabs = [k for k in range(len(y_edges) - 1)
                 if y_edges[k + 1] > y_a and y_edges[k] < y_b]

    pix, cells, vals = [], [], []
    for k in slabs:
        wlo, whi = _slab_window(sy, dy, y_edges[k], y_edges[k + 1], t_min, t_max)
        if whi <= wlo:
            continue
        inside = np.maximum(np.minimum(hi, whi) - np.maximum(lo, wlo), 0.0)
        chords = np.diff(inside, axis=1) * norm[:, None]
        ii, jj = np.nonzero(chords)
        pix.append(ii)
        cells.append(k * nr + jj)
        vals.append(chords[ii, jj])
    if not pix:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    return np.concatenate(pix), np.concatenate(cells), np.concatenate(vals)


def check_grids(geom: ImagingGeometry, recon: Field2D, detector: Field2D, rtol: float = 1e-9):
    xi = magnification(geom)
    for name, dr, dx in (("radial", recon.spacing_col, detector.spacing_col),
                         ("axial", recon.spacing_row, detector.spacing_row)):
        if not np.isclose(dr, dx / xi, rtol=rtol, atol=0):
            raise GeometryError(
                f"inconsistent {name} pitch: reconstruction {dr:g} != detector {dx:g} / xi {xi:g}")
    if recon.origin_col < 0:
        raise GeometryError("reconstruction radii must start at r >= 0")


def build_operator(geom: ImagingGeometry, recon: Field2D, detector: Field2D,
                   threads: int = 1) -> SparseOperator:
    """Assemble the chord-length matrix for ``geom`` between the two grids."""
    check_grids(geom, recon, detector)
    r_edges = recon.col_edges()
    y_edges = recon.row_edges()
    xs = detector.col_centers()
    ys = detector.row_centers()
    nx = detector.cols

    def work(i):
        return _assemble_row(geom, xs, ys[i], r_edges, y_edges)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(detector.rows)))
    else:
        parts = [work(i) for i in range(detector.rows)]

    rows = np.concatenate([i * nx + p[0] for i, p in enumerate(parts)])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    shape = (detector.rows * detector.cols, recon.rows * recon.cols)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    mat.sum_duplicates()
    mat.sort_indices()
    return SparseOperator(mat, recon.zeros_like(), detector.zeros_like())


def apply(A: SparseOperator, u: Field2D) -> Field2D:
    """Forward projection ``A u`` on the detector grid."""
    if u.shape != A.recon.shape:
        raise ValueError(f"field shape {u.shape} does not match operator domain {A.recon.shape}")
    return A.detector.with_values(A.matvec(u.values.ravel()))


def apply_adjoint(A: SparseOperator, d: Field2D) -> Field2D:
    """Back projection ``A^T d`` on the reconstruction grid."""
    if d.shape != A.detector.shape:
        raise ValueError(f"field shape {d.shape} does not match operator range {A.detector.shape}")
    return A.recon.with_values(A.rmatvec(d.values.ravel()))


# -- sinogram export ----------------------------------------------------------

def sinogram_angles(dtheta_deg: float) -> np.ndarray:
    """Angles ``0, dtheta, ..., 180 - dtheta`` in degrees."""
    if not dtheta_deg > 0:
        raise ValueError(f"angular step must be positive, got {dtheta_deg}")
    n = 180.0 / dtheta_deg
    n_int = int(round(n))
    if n_int < 1 or abs(n - n_int) > 1e-9 * n:
        raise ValueError(f"angular step {dtheta_deg} does not divide 180 degrees")
    return np.arange(n_int) * dtheta_deg


def replicate_sinogram(d: Field2D, dtheta_deg: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Read-only view of the single projection repeated at every angle.

    Returns ``(theta_deg, sino)`` with ``sino`` shaped ``(angles, rows, cols)``.
    """
    theta = sinogram_angles(dtheta_deg)
    sino = np.broadcast_to(d.values, (len(theta),) + d.shape)
    return theta, sino


def export_sinogram(d: Field2D, path, dtheta_deg: float = 0.25, dtype=np.float32) -> Path:
    """Write the replicated sinogram as ``.npy`` plus a JSON sidecar with the angles.

    The array is streamed angle by angle so full-size exports do not need
    the full stack in memory.
    """
    theta = sinogram_angles(dtheta_deg)
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    out = np.lib.format.open_memmap(path, mode="w+", dtype=dtype,
                                    shape=(len(theta),) + d.shape)
    view = d.values.astype(dtype)
    for k in range(len(theta)):
        out[k] = view
    out.flush()
    del out
    meta = {
        "dtheta_deg": dtheta_deg,
        "n_angles": len(theta),
        "theta_deg": theta.tolist(),
        "layout": "angles,rows,cols",
        "spacing_row": d.spacing_row,
        "spacing_col": d.spacing_col,
        "origin_row": d.origin_row,
        "origin_col": d.origin_col,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))
    return path


# -- ABLA operator cache ------------------------------------------------------

ABLA_MAGIC = b"ABLA"
ABLA_VERSION = 1
_ABLA_HEADER = struct.Struct("<4sI" + "Q" * 7 + "d" * 8)


def write_abla(path, A: SparseOperator) -> None:
    m = A.matrix
    r, q = A.recon, A.detector
    header = _ABLA_HEADER.pack(
        ABLA_MAGIC, ABLA_VERSION, m.shape[0], m.shape[1], m.nnz,
        r.rows, r.cols, q.rows, q.cols,
        r.spacing_row, r.spacing_col, r.origin_row, r.origin_col,
        q.spacing_row, q.spacing_col, q.origin_row, q.origin_col)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.indptr.astype("<u8").tobytes())
        fh.write(m.indices.astype("<u4").tobytes())
        fh.write(m.data.astype("<f8").tobytes())


def read_abla(path) -> SparseOperator:
    data = Path(path).read_bytes()
    fields = _ABLA_HEADER.unpack_from(data)
    magic, version, n_rows, n_cols, nnz, rr, rc, qr, qc = fields[:9]
    if magic != ABLA_MAGIC or version != ABLA_VERSION:
        raise ValueError(f"{path}: not an ABLA v{ABLA_VERSION} operator file")
    rsr, rsc, ror, roc, qsr, qsc, qor, qoc = fields[9:]
    off = _ABLA_HEADER.size
    indptr = np.frombuffer(data, "<u8", n_rows + 1, off).astype(np.int64)
    off += 8 * (n_rows + 1)
    indices = np.frombuffer(data, "<u4", nnz, off).astype(np.int32)
    off += 4 * nnz
    vals = np.frombuffer(data, "<f8", nnz, off).copy()
    mat = sp.csr_matrix((vals, indices, indptr), shape=(n_rows, n_cols))
    recon = Field2D(np.zeros((rr, rc)), rsr, rsc, ror, roc)
    det = Field2D(np.zeros((qr, qc)), qsr, qsc, qor, qoc)
    return SparseOperator(mat, recon, det)


def geometry_key(geom: ImagingGeometry, recon: Field2D, detector: Field2D) -> str:
    desc = [geom.mode.value, repr(float(geom.z_source)), repr(float(geom.z_detector))]
    for f in (recon, detector):
        desc += [str(f.rows), str(f.cols)] + [repr(v) for v in (
            f.spacing_row, f.spacing_col, f.origin_row, f.origin_col)]
    return hashlib.sha256("|".join(desc).encode()).hexdigest()[:24]


_MEMORY_CACHE: dict[str, SparseOperator] = {}


def cached_operator(geom: ImagingGeometry, recon: Field2D, detector: Field2D,
                    cache_dir=None, threads: int = 1) -> SparseOperator:
    """Build an operator once per geometry; optionally persist it as ``<key>.abla``.

    ``cache_dir`` defaults to ``$ABELRECON_CACHE_DIR`` when set; without
    either only the in-process cache is used.
    """
    key = geometry_key(geom, recon, detector)
    if key in _MEMORY_CACHE:
        return _MEMORY_CACHE[key]
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    path = Path(cache_dir) / f"{key}.abla" if cache_dir else None
    if path is not None and path.exists():
        A = read_abla(path)
    else:
        A = build_operator(geom, recon, detector, threads=threads)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            write_abla(path, A)
    _MEMORY_CACHE[key] = A
    return A
