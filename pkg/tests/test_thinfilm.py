import numpy as np
import pytest
from numpy.testing import assert_allclose

from core import surfcalc as sc
from core.errors import ConfigurationError, UsageError
from core.helmholtz import project_weighted
from core.thinfilm import (BulkField, average, average_gradient_identity_residual, average_tangential,
                           boundary_normals, build_thin_domain, constant_extension,
                           constant_extension_laplacian_residual, exact_shell_volume,
                           extension_divergence_residual, extension_potential, fit_rate,
                           impermeability_defect, impermeable_extension, integrate_bulk, jacobian,
                           jacobian_bounds, normal_average_rate, normal_average_ratio, perturbed_extension,
                           psi_bound, run_sweep, separable_field, shell_field, worker_count, write_rate_table)


def profile(grid):
    return np.zeros(grid.size), 1.0 + 0.3 * grid.harmonic(2, 0)


@pytest.fixture(scope="module")
def shell(sphere):
    g0, g1 = profile(sphere)
    return build_thin_domain(sphere, g0, g1, 0.1)


@pytest.fixture(scope="module")
def uniform_shell(small_sphere):
    return build_thin_domain(small_sphere, np.zeros(small_sphere.size), np.ones(small_sphere.size), 0.1)


@pytest.fixture(scope="module")
def solenoidal(sphere, shell):
    rng = np.random.default_rng(7)
    return project_weighted(sphere, sphere.random_tangent(rng, 4), shell.g).solenoidal


def test_jacobian_on_unit_sphere(uniform_shell):
    r = uniform_shell.radial_nodes
    assert_allclose(jacobian(uniform_shell), (1.0 + r) ** 2, atol=1e-12)
    assert_allclose(jacobian(uniform_shell, 0.05), 1.1025, atol=1e-12)


def test_radial_rule(shell):
    r = shell.radial_nodes
    assert np.all(r > 0)
    assert np.all(r < shell.eps * shell.g1[:, None])
    assert_allclose(shell.radial_weights.sum(axis=1), shell.eps * shell.g)


def test_averages(shell):
    grid = shell.grid
    eta = grid.harmonic(3, 1)
    assert_allclose(average(constant_extension(shell, eta)), eta, atol=1e-13)
    radius = separable_field(shell, [(np.ones(grid.size), (0.0, 1.0))])
    assert_allclose(average(radius), 0.5 * shell.eps * (shell.g0 + shell.g1), atol=1e-13)


def test_shell_volume(uniform_shell, torus):
    volume = integrate_bulk(BulkField(uniform_shell, np.ones_like(uniform_shell.radial_nodes)))
    assert volume == pytest.approx(exact_shell_volume(uniform_shell), rel=1e-12)
    assert volume == pytest.approx(4.0 * np.pi / 3.0 * (1.1 ** 3 - 1.0), rel=1e-12)

    tube = build_thin_domain(torus, np.full(torus.size, -0.5), np.full(torus.size, 0.5), 0.2)
    volume = integrate_bulk(BulkField(tube, np.ones_like(tube.radial_nodes)))
    assert volume == pytest.approx(exact_shell_volume(tube), rel=1e-10)


def test_shell_volume_needs_constant_thickness(shell):
    with pytest.raises(UsageError):
        exact_shell_volume(shell)


def test_average_gradient_identity(shell, solenoidal):
    grid = shell.grid
    eta = grid.harmonic(2, 1) + 0.5 * grid.harmonic(4, -3)
    scalar = separable_field(shell, [(eta, (0.0, 1.0, 0.5)), (np.ones(grid.size), (0.0, 0.0, 1.0))])
    report = average_gradient_identity_residual(scalar)
    assert report.identity == "ave_der"
    assert report.residual_max <= 1e-8
    assert average_gradient_identity_residual(impermeable_extension(solenoidal, shell)).residual_max <= 1e-8


def test_average_of_matrix_bulk_field(shell):
    n, nr = shell.radial_nodes.shape
    A = np.arange(9.0).reshape(3, 3)
    values = np.broadcast_to(A, (n, nr, 3, 3)) * (shell.radial_nodes / shell.eps)[..., None, None]
    mean = average(BulkField(shell, values))
    expected = 0.5 * (shell.g0 + shell.g1)[:, None, None] * A
    assert mean.shape == (n, 3, 3)
    assert_allclose(mean, expected, atol=1e-12)
    with pytest.raises(UsageError):
        BulkField(shell, values[:, :-1])


def test_constant_extension_is_flat_in_the_normal_direction(shell):
    eta = constant_extension(shell, shell.grid.harmonic(3, 2))
    assert np.max(np.abs(eta.normal_derivative())) <= 1e-12


def test_boundary_normals(shell, uniform_shell):
    for sheet in (0, 1):
        n = boundary_normals(shell, sheet)
        assert_allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-13)
    assert_allclose(boundary_normals(uniform_shell, 1), uniform_shell.grid.normal, atol=1e-12)
    assert_allclose(boundary_normals(uniform_shell, 0), -uniform_shell.grid.normal, atol=1e-12)
    with pytest.raises(UsageError):
        boundary_normals(shell, 2)


def test_extension_is_impermeable(shell, solenoidal):
    assert impermeability_defect(solenoidal, shell) <= 1e-9
    alpha, beta = extension_potential(shell)
    assert alpha.shape == beta.shape == (shell.grid.size, 3)


def test_extension_divergence_of_rotation(uniform_shell):
    v = sc.killing_field(uniform_shell.grid, (0.0, 0.0, 1.0))
    report = extension_divergence_residual(v, uniform_shell)
    assert report.residual_max <= 1e-10


def test_tangent_shell_field_has_no_normal_average(shell, solenoidal):
    zero = np.zeros(shell.grid.size)
    u = shell_field(shell, solenoidal, zero, zero)
    norm, h1 = normal_average_ratio(u)
    assert norm <= 1e-13
    assert h1 > 0
    assert_allclose(average_tangential(u), solenoidal, atol=1e-13)


def test_perturbed_extension_keeps_inner_sheet(shell, solenoidal):
    rho = shell.grid.harmonic(1, 0)
    plain = impermeable_extension(solenoidal, shell)
    perturbed = perturbed_extension(solenoidal, rho, shell, 0)
    offset = (shell.radial_nodes - shell.eps * shell.g0[:, None]) * rho[:, None]
    change = np.sum((perturbed.values - plain.values) * shell.grid.normal[:, None], axis=-1)
    assert_allclose(change, offset, atol=1e-13)


def test_normal_average_rate_table(sphere, solenoidal):
    g0, g1 = profile(sphere)
    fields = {eps: impermeable_extension(solenoidal, build_thin_domain(sphere, g0, g1, eps))
              for eps in (0.1, 0.05, 0.025)}
    rows, slope, r2 = normal_average_rate(fields)
    assert [row["epsilon"] for row in rows] == [0.1, 0.05, 0.025]
    assert abs(slope - 0.5) <= 0.1
    assert r2 >= 0.98


def test_laplacian_of_constant_extension(sphere):
    report = constant_extension_laplacian_residual(sphere, sphere.harmonic(2, 0))
    assert report.identity == "lap_rest"
    assert report.residual_max <= 1e-4


def test_bounds(shell, uniform_shell):
    assert max(psi_bound(uniform_shell).values()) <= 1e-12
    bounds = psi_bound(shell)
    assert bounds["extension"] > 0 and bounds["averaging"] > 0
    j = jacobian_bounds(uniform_shell)
    assert 1.0 < j["min"] < j["max"] < 1.21
    assert j["c"] == j["max"]
    assert j["deviation"] < 2.1


def test_fit_rate():
    eps = np.array([0.1, 0.05, 0.025])
    slope, r2 = fit_rate(eps, 3.0 * eps ** 2)
    assert slope == pytest.approx(2.0)
    assert r2 == pytest.approx(1.0)
    slope, r2 = fit_rate(eps, [1.0, 0.0, 1.0])
    assert np.isnan(slope) and np.isnan(r2)


def test_domain_validation(small_sphere):
    n = small_sphere.size
    with pytest.raises(ConfigurationError) as err:
        build_thin_domain(small_sphere, np.zeros(n), np.zeros(n), 0.0, n_radial=1)
    assert len(err.value.violations) == 3
    assert any(v.startswith("thickness") for v in err.value.violations)
    with pytest.raises(ConfigurationError):
        build_thin_domain(small_sphere, np.zeros(n), np.full(n, 2.0), 1.0)
    with pytest.raises(ConfigurationError):
        build_thin_domain(small_sphere, np.zeros(n), np.full(n, 0.5), 0.1, lower_bound=0.6)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("SURFNS_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("SURFNS_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("SURFNS_THREADS", "many")
    assert worker_count() == 1


@pytest.mark.slow
def test_sweep_rates(shell, tmp_path):
    result = run_sweep(shell)
    assert result.slopes["boundary_normal"] >= 1.9
    assert result.slopes["ext_div"] >= 1.4
    assert abs(result.slopes["normal_average"] - 0.5) <= 0.1
    for name in ("boundary_normal", "ext_div", "normal_average"):
        assert result.r2[name] >= 0.98
    assert result.ave_der_max <= 1e-8
    assert result.impermeability_max <= 1e-9

    path = write_rate_table(result.rows, tmp_path, "rates.csv")
    lines = open(path).read().splitlines()
    assert lines[0] == "epsilon,quantity,norm,normalized_ratio,fitted_slope"
    assert len(lines) == 1 + 4 * 8


def test_sweep_is_thread_independent(small_sphere, monkeypatch):
    g0, g1 = profile(small_sphere)
    base = build_thin_domain(small_sphere, g0, g1, 0.1, n_radial=8)
    monkeypatch.setenv("SURFNS_THREADS", "1")
    serial = run_sweep(base, eps_values=(0.1, 0.05, 0.025))
    monkeypatch.setenv("SURFNS_THREADS", "3")
    threaded = run_sweep(base, eps_values=(0.1, 0.05, 0.025))
    assert serial.rows == threaded.rows
