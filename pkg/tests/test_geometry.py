import numpy as np
import pytest
from numpy.testing import assert_allclose

from core import surfcalc as sc
from core.errors import ConfigurationError, UsageError
from core.fields import ScalarField, TangentField, WeightField, as_values
from core.geometry import build_sphere_grid, build_torus_grid, integrate
from core.spectral import real_harmonic_values


def test_unit_sphere_curvatures(sphere):
    assert_allclose(sphere.H, -2.0, atol=1e-12)
    assert_allclose(sphere.K, 1.0, atol=1e-12)
    assert abs(integrate(sphere, sphere.H ** 2) - 16.0 * np.pi) < 1e-10
    assert abs(sphere.area - 4.0 * np.pi) < 1e-12


def test_sphere_radius_scales_curvature():
    grid = build_sphere_grid(2.0, 12)
    assert_allclose(grid.H, -1.0, atol=1e-12)
    assert_allclose(grid.K, 0.25, atol=1e-12)
    assert abs(grid.area - 16.0 * np.pi) < 1e-10


def test_harmonics_are_orthonormal(sphere):
    y20 = sphere.harmonic(2, 0)
    y31 = sphere.harmonic(3, -1)
    assert abs(sphere.inner(y20, y20) - 1.0) < 1e-12
    assert abs(sphere.inner(y31, y31) - 1.0) < 1e-12
    assert abs(sphere.inner(y20, y31)) < 1e-12
    assert abs(integrate(sphere, y20)) < 1e-12


def test_sphere_laplacian_eigenvalues(sphere):
    for l, m in ((1, 0), (2, 1), (5, -3), (12, 7)):
        y = sphere.harmonic(l, m)
        assert_allclose(sphere.laplacian(y), -l * (l + 1) * y, atol=1e-9)


def test_sphere_evaluate_matches_closed_form(sphere, rng):
    pts = rng.standard_normal((50, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    theta, phi = sphere.angles_of(pts)
    values = sphere.evaluate(sphere.harmonic(4, 2), pts * 1.3)
    assert_allclose(values, real_harmonic_values(4, 2, theta, phi), atol=1e-11)


def test_torus_geometry(torus):
    R, r = torus.R, torus.r
    c = np.cos(torus.theta)
    assert abs(torus.area - 4.0 * np.pi ** 2 * R * r) < 1e-9
    assert_allclose(torus.K, c / (r * (R + r * c)), atol=1e-8)
    assert_allclose(np.abs(torus.H), 1.0 / r + c / (R + r * c), atol=1e-8)
    assert abs(integrate(torus, torus.K)) < 1e-10
    assert torus.weingarten_asymmetry < 1e-8


@pytest.mark.parametrize("differentiation", ["spectral", "fd4"])
def test_torus_grid_builds(differentiation):
    grid = build_torus_grid(2.0, 1.0, 32, 48, differentiation)
    assert grid.size == 32 * 48
    assert grid.descriptor()["nodes"] == grid.size
    assert grid.weingarten.shape == (grid.size, 3, 3)
    assert np.all(np.isfinite(grid.H)) and np.all(np.isfinite(grid.K))
    assert grid.area == pytest.approx(8.0 * np.pi ** 2, rel=1e-3)


def test_torus_harmonic_fields(torus):
    first, second = torus.harmonic_fields()
    for v in (first, second):
        assert np.max(np.abs(torus.normal_component(v))) < 1e-12
        assert np.max(np.abs(sc.surface_divergence(torus, v))) < 1e-10
        assert np.max(np.abs(sc.surface_divergence(torus, np.cross(torus.normal, v)))) < 1e-10
    assert abs(torus.inner(first, second)) < 1e-10


def test_torus_normal_is_outward(torus):
    center = np.stack([torus.R * np.cos(torus.phi), torus.R * np.sin(torus.phi), np.zeros(torus.size)], axis=1)
    assert np.all(np.sum((torus.points - center) * torus.normal, axis=1) > 0)


def test_torus_fd4_option():
    grid = build_torus_grid(2.0, 1.0, 64, 64, "fd4")
    assert grid.descriptor()["differentiation"] == "fd4"
    assert abs(integrate(grid, grid.K)) < 1e-3


def test_torus_evaluate_interpolates(torus):
    f = torus.fourier_mode(2, 3, "sin")
    pts = torus.points[::97] * 1.0
    assert_allclose(torus.evaluate(f, pts), f[::97], atol=1e-10)


@pytest.mark.parametrize("kwargs, fragment", [
    ({"R": 1.0, "r": 2.0}, "r < R"),
    ({"n_theta": 30}, "n_theta"),
    ({"differentiation": "fd2"}, "differentiation"),
])
def test_torus_rejects_bad_parameters(kwargs, fragment):
    with pytest.raises(ConfigurationError) as err:
        build_torus_grid(**kwargs)
    assert any(fragment in v for v in err.value.violations)


def test_sphere_reports_all_violations():
    with pytest.raises(ConfigurationError) as err:
        build_sphere_grid(-1.0, 4)
    assert len(err.value.violations) == 2


def test_fields_bind_to_grid(sphere, small_sphere, rng):
    v = TangentField(sphere, sphere.random_ambient(rng, 4))
    assert np.max(np.abs(sphere.normal_component(v.values))) < 1e-14
    with pytest.raises(UsageError):
        as_values(small_sphere, v, "vector")
    with pytest.raises(UsageError):
        ScalarField(sphere, np.ones(3))


def test_weight_field_lower_bound(sphere):
    g = WeightField(sphere, 1.0 + 0.3 * sphere.harmonic(2, 0), lower_bound=0.5)
    assert not g.is_constant
    assert WeightField.constant(sphere, 2.0).is_constant
    with pytest.raises(ConfigurationError):
        WeightField(sphere, sphere.harmonic(2, 0))


def test_describe_is_json(sphere):
    assert '"backend": "sphere"' in sphere.describe()
