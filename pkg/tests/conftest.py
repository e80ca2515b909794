import numpy as np
import pytest

from abelrecon.abelop import build_operator
from abelrecon.grid import BeamMode, ImagingGeometry, detector_grid, recon_grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_operator(mode="parallel", rows=12, cols=8, pitch=0.1, half=False):
    if mode == "cone":
        geom = ImagingGeometry(59.2 / 40, 70.3 / 40, pitch, BeamMode.CONE)
    else:
        geom = ImagingGeometry(detector_pitch=pitch)
    rec = recon_grid(rows, cols, geom)
    det = detector_grid(rows, cols, geom, half=half)
    return geom, build_operator(geom, rec, det)


@pytest.fixture(params=["parallel", "cone"])
def operator(request):
    return small_operator(request.param)
