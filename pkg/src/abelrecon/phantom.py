"""Analytic axially symmetric phantoms with closed-form projections.

A phantom is a sum of spherical components and annular boxes.  A spherical
component of radius ``nu`` is, at height ``y``, a radial profile supported on
``r <= delta(y, nu) = sqrt(nu^2 - y^2)``:

====  ======================  ==========================
kind  profile ``f(r)``        parallel projection ``Af(x)``
====  ======================  ==========================
1     1                       2 sqrt(delta^2 - x^2)
2     sqrt(delta^2 - r^2)     pi/2 (delta^2 - x^2)
3     (delta^2 - r^2)^(3/2)   3 pi/8 (delta^2 - x^2)^2
====  ======================  ==========================

Units: lengths cm, densities g/cm^3, projections g/cm^2.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .grid import Field2D

KINDS = (1, 2, 3)


class SpecParseError(ValueError):
    def __init__(self, msg, line=None, source="<spec>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)


def delta(y, nu):
    """Half-width ``sqrt(nu^2 - y^2)`` of a sphere of radius ``|nu|`` at height ``y``; 0 outside."""
    y = np.asarray(y, dtype=float)
    nu = abs(float(nu))
    out = np.sqrt(np.maximum(nu * nu - y * y, 0.0))
    out = np.where(np.abs(y) >= nu, 0.0, out)
    return out if out.ndim else float(out)


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"unknown profile kind {kind!r}; expected one of {KINDS}")


def eval_radial(kind: int, r, delta_):
    """Profile ``f_kind(r; delta)``, zero for ``r > delta``."""
    _check_kind(kind)
    r = np.abs(np.asarray(r, dtype=float))
    dl = np.asarray(delta_, dtype=float)
    s = np.maximum(dl * dl - r * r, 0.0)
    if kind == 1:
        val = np.ones_like(s)
    elif kind == 2:
        val = np.sqrt(s)
    else:
        val = s ** 1.5
    out = np.where((r <= dl) & (dl > 0), val, 0.0)
    return out if out.ndim else float(out)


def eval_projection(kind: int, x, delta_):
    """Closed-form parallel-beam projection of ``f_kind``, zero for ``|x| > delta``."""
    _check_kind(kind)
    x = np.abs(np.asarray(x, dtype=float))
    dl = np.asarray(delta_, dtype=float)
    s = np.maximum(dl * dl - x * x, 0.0)
    if kind == 1:
        val = 2.0 * np.sqrt(s)
    elif kind == 2:
        val = 0.5 * np.pi * s
    else:
        val = 0.375 * np.pi * s * s
    out = np.where((x <= dl) & (dl > 0), val, 0.0)
    return out if out.ndim else float(out)


def chord(radius, x):
    """Chord ``2 sqrt(radius^2 - x^2)`` of a disc, 0 when the line misses it."""
    return 2.0 * np.sqrt(np.maximum(radius * radius - np.square(x), 0.0))


@dataclass(frozen=True)
class Sphere:
    kind: int
    amplitude: float
    nu: float

    def __post_init__(self):
        _check_kind(self.kind)
        if self.nu == 0:
            raise ValueError("sphere radius must be non-zero")


@dataclass(frozen=True)
class Annulus:
    amplitude: float
    r_lo: float
    r_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (0 <= self.r_lo < self.r_hi):
            raise ValueError(f"annulus needs 0 <= r_lo < r_hi, got {self.r_lo}, {self.r_hi}")
        if not self.y_lo < self.y_hi:
            raise ValueError(f"annulus needs y_lo < y_hi, got {self.y_lo}, {self.y_hi}")


@dataclass(frozen=True)
class PhantomSpec:
    spheres: tuple[Sphere, ...] = field(default_factory=tuple)
    annuli: tuple[Annulus, ...] = field(default_factory=tuple)

    def __add__(self, other: "PhantomSpec") -> "PhantomSpec":
        return PhantomSpec(self.spheres + other.spheres, self.annuli + other.annuli)


def render(spec: PhantomSpec, grid: Field2D) -> Field2D:
    """Sample the phantom density at the cell centres of a reconstruction grid."""
    Y, R = np.meshgrid(grid.row_centers(), grid.col_centers(), indexing="ij")
    out = np.zeros(grid.shape)
    for s in spec.spheres:
        out += s.amplitude * eval_radial(s.kind, R, delta(Y, s.nu))
    for a in spec.annuli:
        inside = (R >= a.r_lo) & (R < a.r_hi) & (Y >= a.y_lo) & (Y < a.y_hi)
        out += a.amplitude * inside
    return grid.with_values(out)


def render_projection(spec: PhantomSpec, grid: Field2D) -> Field2D:
    """Exact parallel-beam projection at the pixel centres of a detector grid."""
    Y, X = np.meshgrid(grid.row_centers(), grid.col_centers(), indexing="ij")
    out = np.zeros(grid.shape)
    for s in spec.spheres:
        out += s.amplitude * eval_projection(s.kind, X, delta(Y, s.nu))
    for a in spec.annuli:
        rows = (Y >= a.y_lo) & (Y < a.y_hi)
        out += a.amplitude * rows * (chord(a.r_hi, X) - chord(a.r_lo, X))
    return grid.with_values(out)


def add_noise(d: Field2D, sigma_frac: float, seed: int = 0) -> Field2D:
    """Add i.i.d. Gaussian noise with standard deviation ``sigma_frac * max|d|``."""
    if sigma_frac < 0:
        raise ValueError("sigma_frac must be non-negative")
    if sigma_frac == 0:
        return d
    sigma = sigma_frac * float(np.max(np.abs(d.values)))
    rng = np.random.default_rng(seed)
    return d.with_values(d.values + rng.normal(0.0, sigma, size=d.shape))


# -- spec files ---------------------------------------------------------------

_STANZA = re.compile(r"^\[(\w+)\]$")
_SPHERE_KEYS = {"kind", "amplitude", "nu"}
_ANNULUS_KEYS = {"amplitude", "r", "y"}


def _numbers(text, n, lineno, source):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != n:
        raise SpecParseError(f"expected {n} number(s), got {text.strip()!r}", lineno, source)
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise SpecParseError(f"not a number: {text.strip()!r}", lineno, source) from None


def parse_spec(text: str, source: str = "<spec>") -> PhantomSpec:
    """Parse ``[sphere]`` / ``[annulus]`` stanzas of ``key = value`` lines.

    ``#`` starts a comment.  Sphere keys: ``kind``, ``amplitude``, ``nu``.
    Annulus keys: ``amplitude``, ``r = lo, hi``, ``y = lo, hi``.
    """
    stanzas = []  # (kind, start line, {key: (value, line)})
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _STANZA.match(line)
        if m:
            name = m.group(1).lower()
            if name not in ("sphere", "annulus"):
                raise SpecParseError(f"unknown stanza [{name}]", lineno, source)
            stanzas.append((name, lineno, {}))
            continue
        if "=" not in line:
            raise SpecParseError(f"expected 'key = value', got {line!r}", lineno, source)
        if not stanzas:
            raise SpecParseError("key outside of a stanza", lineno, source)
        key, val = (s.strip() for s in line.split("=", 1))
        name, _, kv = stanzas[-1]
        allowed = _SPHERE_KEYS if name == "sphere" else _ANNULUS_KEYS
        if key not in allowed:
            raise SpecParseError(f"unknown key {key!r} in [{name}]", lineno, source)
        if key in kv:
            raise SpecParseError(f"duplicate key {key!r}", lineno, source)
        kv[key] = (val, lineno)

    spheres, annuli = [], []
    for name, start, kv in stanzas:
        allowed = _SPHERE_KEYS if name == "sphere" else _ANNULUS_KEYS
        missing = allowed - kv.keys()
        if missing:
            raise SpecParseError(f"[{name}] missing {sorted(missing)}", start, source)
        try:
            if name == "sphere":
                kind = _numbers(kv["kind"][0], 1, kv["kind"][1], source)[0]
                if kind != int(kind):
                    raise SpecParseError("kind must be an integer", kv["kind"][1], source)
                spheres.append(Sphere(int(kind),
                                      _numbers(kv["amplitude"][0], 1, kv["amplitude"][1], source)[0],
                                      _numbers(kv["nu"][0], 1, kv["nu"][1], source)[0]))
            else:
                r_lo, r_hi = _numbers(kv["r"][0], 2, kv["r"][1], source)
                y_lo, y_hi = _numbers(kv["y"][0], 2, kv["y"][1], source)
                amp = _numbers(kv["amplitude"][0], 1, kv["amplitude"][1], source)[0]
                annuli.append(Annulus(amp, r_lo, r_hi, y_lo, y_hi))
        except SpecParseError:
            raise
        except ValueError as exc:
            raise SpecParseError(str(exc), start, source) from None
    return PhantomSpec(tuple(spheres), tuple(annuli))


def format_spec(spec: PhantomSpec) -> str:
    out = []
    for s in spec.spheres:
        out += ["[sphere]", f"kind = {s.kind}", f"amplitude = {s.amplitude!r}", f"nu = {s.nu!r}", ""]
    for a in spec.annuli:
        out += ["[annulus]", f"amplitude = {a.amplitude!r}", f"r = {a.r_lo!r}, {a.r_hi!r}",
                f"y = {a.y_lo!r}, {a.y_hi!r}", ""]
    return "\n".join(out)


def load_spec(path) -> PhantomSpec:
    path = Path(path)
    return parse_spec(path.read_text(), source=str(path))


def bundled_spec(name: str = "layered") -> PhantomSpec:
    """Load a spec shipped with the package (``layered`` or ``desk``)."""
    fname = name if name.endswith(".spec") else name + ".spec"
    text = resources.files("abelrecon.data").joinpath(fname).read_text()
    return parse_spec(text, source=fname)
