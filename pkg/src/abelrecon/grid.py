"""Grid containers, imaging geometry and the ABLG/CSV grid formats.

Two half-planes are in play.  The reconstruction grid has rows along the
symmetry axis ``y`` and columns along the radius ``r >= 0``.  The detector
grid has rows along ``y`` and columns along the detector coordinate ``x``.
Samples are cell-centred: cell ``(i, j)`` sits at
``(origin_row + (i + 1/2) * spacing_row, origin_col + (j + 1/2) * spacing_col)``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    """Raised for an invalid imaging geometry or mismatched grids."""


class GridFormatError(ValueError):
    """Raised when a grid file cannot be decoded."""


class BeamMode(str, enum.Enum):
    PARALLEL = "parallel"
    CONE = "cone"


@dataclass(frozen=True)
class Field2D:
    """Rectangular scalar field with physical spacing (cm).

    ``values`` is a read-only ``(rows, cols)`` float64 array; use
    :meth:`with_values` to derive a new field on the same grid.
    """

    values: np.ndarray
    spacing_row: float
    spacing_col: float
    origin_row: float = 0.0
    origin_col: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if vals.ndim != 2:
            raise ValueError(f"field values must be 2-D, got shape {vals.shape}")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"field must have at least one cell, got {vals.shape}")
        if not (self.spacing_row > 0 and self.spacing_col > 0):
            raise ValueError("grid spacings must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "spacing_row", float(self.spacing_row))
        object.__setattr__(self, "spacing_col", float(self.spacing_col))
        object.__setattr__(self, "origin_row", float(self.origin_row))
        object.__setattr__(self, "origin_col", float(self.origin_col))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def row_centers(self) -> np.ndarray:
        return self.origin_row + (np.arange(self.rows) + 0.5) * self.spacing_row

    def col_centers(self) -> np.ndarray:
        return self.origin_col + (np.arange(self.cols) + 0.5) * self.spacing_col

    def row_edges(self) -> np.ndarray:
        return self.origin_row + np.arange(self.rows + 1) * self.spacing_row

    def col_edges(self) -> np.ndarray:
        return self.origin_col + np.arange(self.cols + 1) * self.spacing_col

    def with_values(self, values) -> "Field2D":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.shape:
            values = values.reshape(self.shape)
        return replace(self, values=values)

    def zeros_like(self) -> "Field2D":
        return self.with_values(np.zeros(self.shape))

    def same_grid(self, other: "Field2D", rtol: float = 1e-12) -> bool:
        return (
            self.shape == other.shape
            and np.isclose(self.spacing_row, other.spacing_row, rtol=rtol, atol=0)
            and np.isclose(self.spacing_col, other.spacing_col, rtol=rtol, atol=0)
            and np.isclose(self.origin_row, other.origin_row, rtol=rtol, atol=1e-12)
            and np.isclose(self.origin_col, other.origin_col, rtol=rtol, atol=1e-12)
        )


def make_field(rows: int, cols: int, spacing_row: float, spacing_col: float,
               origin: tuple[float, float] = (0.0, 0.0)) -> Field2D:
    """Zero-initialised field of ``rows x cols`` cells."""
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be >= 1, got ({rows}, {cols})")
    return Field2D(np.zeros((int(rows), int(cols))), spacing_row, spacing_col,
                   origin[0], origin[1])


@dataclass(frozen=True)
class ImagingGeometry:
    """Point source / flat detector geometry, distances measured from the object centre.

    Distances are stored as magnitudes; the source sits at ``z = -z_source``
    and the detector plane at ``z = +z_detector``.  In parallel-beam mode the
    distances are ignored and the magnification is exactly one.
    """

    z_source: float = 1.0
    z_detector: float = 0.0
    detector_pitch: float = 1.0 / 70.0
    mode: BeamMode = BeamMode.PARALLEL

    def __post_init__(self):
        object.__setattr__(self, "mode", BeamMode(self.mode))
        if not self.detector_pitch > 0:
            raise GeometryError("detector pitch must be positive")
        if self.mode is BeamMode.CONE:
            if not self.z_source > 0:
                raise GeometryError(f"source distance must be positive, got {self.z_source}")
            if self.z_detector < 0:
                raise GeometryError(f"detector distance must be non-negative, got {self.z_detector}")

    @classmethod
    def cone_from_magnification(cls, xi: float, z_source: float,
                                detector_pitch: float) -> "ImagingGeometry":
        """Cone-beam geometry with the detector placed to give magnification ``xi``."""
        if xi < 1:
            raise GeometryError(f"magnification must be >= 1, got {xi}")
        return cls(z_source, (xi - 1.0) * z_source, detector_pitch, BeamMode.CONE)

    @property
    def magnification(self) -> float:
        return magnification(self)

    @property
    def recon_pitch(self) -> float:
        """Object-plane pitch ``detector_pitch / magnification``."""
        return self.detector_pitch / self.magnification


def magnification(geom: ImagingGeometry) -> float:
    """Apparent magnification ``(|z_D| + |z_S|) / |z_S|``; exactly 1 for parallel beams."""
    if geom.mode is BeamMode.PARALLEL:
        return 1.0
    zs, zd = abs(geom.z_source), abs(geom.z_detector)
    if zs <= 0:
        raise GeometryError("source distance must be positive")
    return (zd + zs) / zs


def recon_grid(rows: int, cols: int, geom: ImagingGeometry) -> Field2D:
    """Reconstruction half-plane: ``y`` centred on 0, ``r`` from 0, pitch ``dx / xi``."""
    dr = geom.recon_pitch
    return make_field(rows, cols, dr, dr, (-0.5 * rows * dr, 0.0))


def detector_grid(rows: int, cols: int, geom: ImagingGeometry,
                  half: bool = False) -> Field2D:
    """Detector plane matching a ``rows x cols`` reconstruction grid.

    The full detector spans ``x`` in ``[-cols*dx, cols*dx]`` (``2*cols`` pixels);
    ``half=True`` keeps only ``x >= 0``.
    """
    dx = geom.detector_pitch
    ncols = cols if half else 2 * cols
    origin_col = 0.0 if half else -cols * dx
    return make_field(rows, ncols, dx, dx, (-0.5 * rows * dx, origin_col))


# -- ABLG binary format -------------------------------------------------------

ABLG_MAGIC = b"ABLG"
ABLG_VERSION = 1
_ABLG_HEADER = struct.Struct("<4sIQQdddd")


def write_ablg(path, f: Field2D) -> None:
    header = _ABLG_HEADER.pack(ABLG_MAGIC, ABLG_VERSION, f.rows, f.cols,
                               f.spacing_row, f.spacing_col, f.origin_row, f.origin_col)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_ablg(path) -> Field2D:
    data = Path(path).read_bytes()
    if len(data) < _ABLG_HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, version, rows, cols, sr, sc, orow, ocol = _ABLG_HEADER.unpack_from(data)
    if magic != ABLG_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != ABLG_VERSION:
        raise GridFormatError(f"{path}: unsupported version {version}")
    expected = _ABLG_HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise GridFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=_ABLG_HEADER.size).reshape(rows, cols)
    return Field2D(values, sr, sc, orow, ocol)


# -- CSV ----------------------------------------------------------------------

def write_csv(path, f: Field2D) -> None:
    # repr-precision floats so a read-back is exact
    np.savetxt(path, f.values, delimiter=",", fmt="%.17g")


def read_csv(path, spacing_row: float, spacing_col: float,
             origin: tuple[float, float] = (0.0, 0.0)) -> Field2D:
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    return Field2D(values, spacing_row, spacing_col, origin[0], origin[1])


def read_field(path, spacing: float | None = None,
               origin: tuple[float, float] = (0.0, 0.0)) -> Field2D:
    """Load an ABLG file, or a CSV matrix when ``path`` ends in ``.csv``."""
    if str(path).lower().endswith(".csv"):
        if spacing is None:
            raise GridFormatError("CSV input needs an explicit spacing")
        return read_csv(path, spacing, spacing, origin)
    return read_ablg(path)
