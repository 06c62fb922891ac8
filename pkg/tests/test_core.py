import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oispec.core import (
    DimensionError,
    DomainError,
    IlluminationGeometry,
    ImagePlane,
    SpectralStack,
    WavelengthGrid,
    light_vector,
    lighting_matrix,
    rayleigh_limit,
    total_images,
    wavelength_count,
)


def test_wavelength_count_acquisition_grid():
    assert wavelength_count(430, 1000, 5) == 115
    assert wavelength_count(500, 500, 5) == 1


@pytest.mark.parametrize("args", [(430, 1000, 7), (430, 1000, 0), (430, 1000, -5), (1000, 430, 5)])
def test_wavelength_count_rejects_bad_ranges(args):
    with pytest.raises(DomainError):
        wavelength_count(*args)


def test_grid_from_range_and_lookup():
    g = WavelengthGrid.from_range(430, 1000, 5)
    assert g.count == 115
    assert g.end_nm == 1000.0
    assert g.wavelength(1) == 435.0
    assert g.index_of(1000.0) == 114
    with pytest.raises(KeyError):
        g.index_of(432.5)
    with pytest.raises(KeyError):
        g.index_of(1005.0)


def test_total_images_ring():
    assert total_images(IlluminationGeometry.ring(50, 10), WavelengthGrid.from_range(430, 1000, 5)) == 1150


def test_rayleigh_limit_value():
    # 0.61 * 535 / 0.42 nm
    assert rayleigh_limit(535, 0.42) == pytest.approx(0.777023809, abs=1e-9)
    with pytest.raises(DomainError):
        rayleigh_limit(535, 0)


def test_light_vector_known_directions():
    assert light_vector(0, 123) == pytest.approx((0.0, 0.0, 1.0))
    s, c = math.sin(math.radians(50)), math.cos(math.radians(50))
    assert light_vector(50, 0) == pytest.approx((s, 0.0, c))
    assert light_vector(50, 90) == pytest.approx((0.0, s, c), abs=1e-15)
    assert light_vector(50, 180) == pytest.approx((-s, 0.0, c), abs=1e-15)


@pytest.mark.parametrize("polar", [-1, 90, 120])
def test_light_vector_polar_domain(polar):
    with pytest.raises(DomainError):
        light_vector(polar, 0)


@given(st.floats(0, 89.99), st.floats(0, 359.99))
def test_light_vector_is_unit(polar, az):
    assert np.linalg.norm(light_vector(polar, az)) == pytest.approx(1.0, abs=1e-12)


def test_geometry_validation():
    with pytest.raises(DomainError):
        IlluminationGeometry(50, ())
    with pytest.raises(DomainError):
        IlluminationGeometry(50, (0, 0))
    with pytest.raises(DomainError):
        IlluminationGeometry(50, (360,))
    with pytest.raises(DomainError):
        IlluminationGeometry(95, (0,))
    ring = IlluminationGeometry.ring()
    assert ring.azimuths_deg == tuple(36.0 * i for i in range(10))
    assert ring.lighting_matrix().shape == (10, 3)


def test_lighting_matrix_shape_check():
    assert lighting_matrix([(0, 0, 1), (1, 0, 0)]).shape == (2, 3)
    with pytest.raises(DimensionError):
        lighting_matrix([(0, 1)])


def test_image_plane_masks_non_finite():
    p = ImagePlane(np.array([[1.0, np.nan], [np.inf, 2.0]]))
    assert p.valid.tolist() == [[True, False], [False, True]]
    assert p.values[0, 1] == 0.0
    with pytest.raises(ValueError):
        p.values[0, 0] = 3.0
    with pytest.raises(DimensionError):
        ImagePlane(np.zeros(3))
    with pytest.raises(DimensionError):
        ImagePlane(np.zeros((2, 2)), np.ones((3, 2), bool))


def test_stack_shape_and_defaults():
    g = WavelengthGrid(500, 10, 2)
    geo = IlluminationGeometry(50, (0, 90, 180))
    s = SpectralStack(g, geo, np.ones((3, 2, 4, 6)))
    assert s.values.dtype == np.float32
    assert s.rotation_center == (2.5, 1.5)
    assert s.plane(1, 1).shape == (4, 6)
    with pytest.raises(DimensionError):
        SpectralStack(g, geo, np.ones((2, 2, 4, 6)))
    with pytest.raises(DomainError):
        SpectralStack(g, geo, np.ones((3, 2, 4, 6)), frame="bogus")
    r = s.replace(frame="reflectance", center=(1, 1))
    assert r.frame == "reflectance" and r.rotation_center == (1.0, 1.0)
