import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from abelrecon.grid import ImagingGeometry, detector_grid, make_field, recon_grid
from abelrecon.phantom import (Annulus, PhantomSpec, SpecParseError, Sphere, add_noise,
                               bundled_spec, delta, eval_projection, eval_radial, format_spec,
                               load_spec, parse_spec, render, render_projection)


def quad_projection(kind, x, dl):
    """Line integral of the radial profile along z by adaptive quadrature."""
    if abs(x) >= dl:
        return 0.0
    half = np.sqrt(dl * dl - x * x)
    val, _ = quad(lambda z: eval_radial(kind, np.hypot(x, z), dl), -half, half,
                  epsabs=1e-13, epsrel=1e-13)
    return val


def test_delta_examples():
    assert delta(0.6, 1.0) == pytest.approx(0.8, abs=1e-15)
    assert delta(0.6, -1.0) == pytest.approx(0.8, abs=1e-15)
    assert delta(1.0, 1.0) == 0.0
    assert delta(2.0, 1.0) == 0.0


@pytest.mark.parametrize("kind, expected", [(1, 2.0), (2, np.pi / 2), (3, 3 * np.pi / 8)])
def test_projection_at_centre(kind, expected):
    assert eval_projection(kind, 0.0, 1.0) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("kind", [1, 2, 3])
@pytest.mark.parametrize("x", [0.0, 0.3, 0.77, 1.4])
def test_projection_against_quadrature(kind, x):
    assert eval_projection(kind, x, 1.5) == pytest.approx(quad_projection(kind, x, 1.5), abs=1e-9)


def test_profiles_vanish_outside():
    assert eval_radial(2, 1.01, 1.0) == 0.0
    assert eval_projection(3, -1.01, 1.0) == 0.0
    assert eval_radial(1, 0.5, 0.0) == 0.0


def test_unknown_kind():
    with pytest.raises(ValueError):
        eval_radial(4, 0.0, 1.0)
    with pytest.raises(ValueError):
        Sphere(0, 1.0, 1.0)


@given(st.sampled_from([1, 2, 3]), st.floats(0, 3), st.floats(0, 3))
def test_nonnegative(kind, r, dl):
    assert eval_radial(kind, r, dl) >= 0
    assert eval_projection(kind, r, dl) >= 0


def test_render_single_sphere():
    grid = make_field(4, 4, 1.0, 1.0, (-2.0, 0.0))
    f = render(PhantomSpec((Sphere(1, 2.0, 1.9),)), grid).values
    # centres r in {0.5, 1.5, ...}, y in {-1.5, ..., 1.5}; hypot <= 1.9 iff inside
    Y, R = np.meshgrid(grid.row_centers(), grid.col_centers(), indexing="ij")
    np.testing.assert_array_equal(f, np.where(R <= np.sqrt(1.9 ** 2 - Y ** 2), 2.0, 0.0))


def test_render_annulus_half_open():
    grid = make_field(2, 2, 1.0, 1.0, (0.0, 0.0))
    f = render(PhantomSpec((), (Annulus(1.5, 0.5, 1.5, 0.5, 1.5),)), grid).values
    np.testing.assert_array_equal(f, [[1.5, 0.0], [0.0, 0.0]])


def test_annulus_projection():
    grid = make_field(1, 3, 1.0, 1.0, (0.0, -1.5))
    p = render_projection(PhantomSpec((), (Annulus(2.0, 1.0, 2.0, 0.0, 1.0),)), grid).values
    expected = 2.0 * (2 * np.sqrt(4 - 1.0) - 0.0)
    np.testing.assert_allclose(p[0], [expected, 2.0 * (2 * np.sqrt(4) - 2.0), expected])


def test_projection_is_linear(rng):
    geom = ImagingGeometry(detector_pitch=0.1)
    det = detector_grid(20, 10, geom)
    a = PhantomSpec((Sphere(2, 1.0, 0.8),), (Annulus(1.0, 0.2, 0.6, -0.4, 0.3),))
    b = PhantomSpec((Sphere(3, 2.0, 0.5), Sphere(1, 0.5, 0.9)))
    pa, pb = render_projection(a, det).values, render_projection(b, det).values
    np.testing.assert_allclose(render_projection(a + b, det).values, pa + pb, rtol=1e-15)


def test_projection_support():
    geom = ImagingGeometry(detector_pitch=0.1)
    det = detector_grid(30, 20, geom)
    p = render_projection(PhantomSpec((Sphere(2, 1.0, 0.8),)), det).values
    Y, X = np.meshgrid(det.row_centers(), det.col_centers(), indexing="ij")
    assert np.all(p[X ** 2 + Y ** 2 >= 0.64] == 0)
    assert np.all(p[X ** 2 + Y ** 2 < 0.6] > 0)


def test_noise_statistics():
    d = make_field(700, 700, 1.0, 1.0).with_values(np.ones((700, 700)))
    n = add_noise(d, 0.1, seed=7).values - 1.0
    assert abs(n.std() - 0.1) <= 0.002
    assert abs(n.mean()) <= 1e-3


def test_noise_seeded_and_zero():
    d = make_field(5, 5, 1.0, 1.0).with_values(np.arange(25.0).reshape(5, 5))
    assert np.array_equal(add_noise(d, 0.05, 3).values, add_noise(d, 0.05, 3).values)
    assert not np.array_equal(add_noise(d, 0.05, 3).values, add_noise(d, 0.05, 4).values)
    assert add_noise(d, 0.0).values is d.values
    with pytest.raises(ValueError):
        add_noise(d, -0.1)


SPEC = """
# comment
[sphere]
kind = 2
amplitude = 1.5   # trailing comment
nu = 1.2

[annulus]
amplitude = 1.5
r = 3.0, 3.75
y = -4.5, -3.0
"""


def test_parse_and_format_round_trip():
    spec = parse_spec(SPEC)
    assert spec.spheres == (Sphere(2, 1.5, 1.2),)
    assert spec.annuli == (Annulus(1.5, 3.0, 3.75, -4.5, -3.0),)
    assert parse_spec(format_spec(spec)) == spec


@pytest.mark.parametrize("text, line", [
    ("[sphere]\nkind = 2\namplitude = x\nnu = 1", 3),
    ("[cube]\n", 1),
    ("kind = 1\n", 1),
    ("[sphere]\nkind = 1\nkind = 2\n", 3),
    ("[sphere]\nkind = 1\n", 1),
    ("[annulus]\namplitude = 1\nr = 1\ny = 0, 1\n", 3),
    ("[sphere]\nkind 1\n", 2),
    ("\n\n[sphere]\nkind = 1\namplitude = 1\nnu = 1\ncolor = 3\n", 7),
])
def test_parse_errors_report_line(text, line):
    with pytest.raises(SpecParseError) as info:
        parse_spec(text, source="t.spec")
    assert info.value.line == line
    assert str(info.value).startswith(f"t.spec:{line}:")


def test_load_spec(tmp_path):
    p = tmp_path / "x.spec"
    p.write_text(SPEC)
    assert load_spec(p) == parse_spec(SPEC)


def test_bundled_specs():
    fig = bundled_spec("layered")
    assert len(fig.annuli) == 34 and len(fig.spheres) == 10
    assert all(a.amplitude == 1.5 for a in fig.annuli)
    assert len(bundled_spec("desk").spheres) == 3


def test_corner_plateau_line():
    # the line y = -4.1 crosses fiducials only; their density is 3/2
    spec = bundled_spec("layered")
    geom = ImagingGeometry(detector_pitch=1 / 70)
    f = render(spec, recon_grid(700, 350, geom))
    row = np.argmin(np.abs(f.row_centers() - (-4.1)))
    vals = np.unique(f.values[row])
    assert set(vals.tolist()) == {0.0, 1.5}
