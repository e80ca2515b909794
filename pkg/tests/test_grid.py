import numpy as np
import pytest
from hypothesis import given, strategies as st

from abelrecon.grid import (BeamMode, Field2D, GeometryError, GridFormatError, ImagingGeometry,
                            detector_grid, magnification, make_field, read_ablg, read_csv,
                            recon_grid, write_ablg, write_csv)


def cone(zs, zd, pitch=1.0):
    return ImagingGeometry(zs, zd, pitch, BeamMode.CONE)


@pytest.mark.parametrize("zs, zd, expected", [
    (1.0, 0.0, 1.0),
    (59.2, 70.3, 2.1875),
    (10.0, 10.0, 2.0),
])
def test_magnification_examples(zs, zd, expected):
    assert magnification(cone(zs, zd)) == pytest.approx(expected, rel=1e-4)


def test_magnification_direct_value():
    # (70.3 + 59.2) / 59.2 evaluated by hand
    assert magnification(cone(59.2, 70.3)) == pytest.approx(129.5 / 59.2, rel=1e-15)


def test_parallel_magnification_is_exactly_one():
    assert magnification(ImagingGeometry(5.0, 100.0, 0.1, BeamMode.PARALLEL)) == 1.0


@pytest.mark.parametrize("zs, zd", [(0.0, 1.0), (-1.0, 1.0), (1.0, -2.0)])
def test_invalid_distances(zs, zd):
    with pytest.raises(GeometryError):
        cone(zs, zd)


@given(st.floats(0.1, 100), st.floats(0, 100), st.sampled_from([0.5, 2.0, 8.0, 0.25]))
def test_magnification_scale_invariant(zs, zd, c):
    # power-of-two factors keep the scaling exact in floating point
    assert magnification(cone(zs, zd)) == magnification(cone(c * zs, c * zd))


@given(st.floats(0.1, 100), st.floats(0, 100), st.floats(1e-3, 1.0))
def test_recon_pitch_not_larger_than_detector_pitch(zs, zd, dx):
    g = cone(zs, zd, dx)
    assert g.magnification >= 1
    assert g.recon_pitch <= dx


def test_make_field_examples():
    f = make_field(2, 2, 1, 1, (0, 0))
    assert f.shape == (2, 2) and np.all(f.values == 0)
    full = make_field(700, 350, 1 / 70, 1 / 70, (-5, 0))
    assert full.shape == (700, 350)
    assert full.row_edges()[-1] == pytest.approx(5.0)
    assert full.col_edges()[-1] == pytest.approx(5.0)
    one = make_field(1, 1, 0.5, 0.5)
    assert one.values.size == 1 and one.values[0, 0] == 0.0


@pytest.mark.parametrize("rows, cols", [(0, 1), (1, 0)])
def test_make_field_rejects_empty(rows, cols):
    with pytest.raises(ValueError):
        make_field(rows, cols, 1, 1)


def test_field_rejects_bad_spacing():
    with pytest.raises(ValueError):
        Field2D(np.zeros((2, 2)), 0.0, 1.0)


def test_field_is_immutable():
    f = make_field(2, 3, 1, 1)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_cell_centred_coordinates():
    f = make_field(4, 3, 0.5, 0.25, (-1.0, 0.0))
    np.testing.assert_allclose(f.row_centers(), [-0.75, -0.25, 0.25, 0.75])
    np.testing.assert_allclose(f.col_centers(), [0.125, 0.375, 0.625])


def test_full_size_grids_share_pitch():
    g = ImagingGeometry(detector_pitch=1 / 70)
    rec, det = recon_grid(700, 350, g), detector_grid(700, 350, g)
    assert det.shape == (700, 700)
    assert det.col_edges()[0] == pytest.approx(-5) and det.col_edges()[-1] == pytest.approx(5)
    assert rec.row_edges()[0] == pytest.approx(-5) and rec.col_edges()[0] == 0.0
    assert detector_grid(700, 350, g, half=True).shape == (700, 350)


def test_ablg_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    f = Field2D(rng.standard_normal((5, 7)), 0.1, 0.2, -0.3, 0.4)
    write_ablg(tmp_path / "f.ablg", f)
    g = read_ablg(tmp_path / "f.ablg")
    assert g.values.tobytes() == f.values.tobytes()
    assert (g.spacing_row, g.spacing_col, g.origin_row, g.origin_col) == (0.1, 0.2, -0.3, 0.4)


def test_ablg_layout(tmp_path):
    f = Field2D([[1.0, 2.0]], 1.0, 1.0)
    write_ablg(tmp_path / "f.ablg", f)
    raw = (tmp_path / "f.ablg").read_bytes()
    assert raw[:4] == b"ABLG"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:16], "little") == 1
    assert int.from_bytes(raw[16:24], "little") == 2
    assert np.frombuffer(raw[-16:], "<f8").tolist() == [1.0, 2.0]


def test_ablg_rejects_garbage(tmp_path):
    (tmp_path / "bad.ablg").write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(GridFormatError):
        read_ablg(tmp_path / "bad.ablg")
    f = make_field(2, 2, 1, 1)
    write_ablg(tmp_path / "t.ablg", f)
    (tmp_path / "t.ablg").write_bytes((tmp_path / "t.ablg").read_bytes()[:-8])
    with pytest.raises(GridFormatError):
        read_ablg(tmp_path / "t.ablg")


def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(1)
    f = Field2D(rng.standard_normal((4, 3)) * 1e-3, 0.5, 0.5)
    write_csv(tmp_path / "f.csv", f)
    g = read_csv(tmp_path / "f.csv", 0.5, 0.5)
    assert np.array_equal(g.values, f.values)
