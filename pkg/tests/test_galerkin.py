import numpy as np
import pytest
from numpy.testing import assert_allclose

from core import surfcalc as sc
from core.errors import DivergenceError
from core.galerkin import _spanning_degree, assemble, galerkin_basis, galerkin_run
from core.nssolver import NSConfig, imex_run


@pytest.fixture(scope="module")
def basis(small_sphere):
    return galerkin_basis(small_sphere, np.ones(small_sphere.size), 0.05, k=30)


def test_spanning_degree(sphere, torus):
    assert _spanning_degree(sphere, 30) == 5
    assert _spanning_degree(sphere, 3) == 1
    assert _spanning_degree(torus, 10) == 1
    assert _spanning_degree(torus, 11) == 2


def test_basis_is_g_orthonormal(basis):
    assert basis.k == 30
    assert basis.gram_defect <= 1e-10
    assert np.all(np.diff(basis.eigenvalues) >= -1e-12)


def test_basis_eigenvalues_on_unit_sphere(basis):
    # rigid rotations carry no strain; l = 2 toroidal modes give 1 + nu (l(l+1) - 2)
    assert_allclose(basis.eigenvalues[:3], 1.0, atol=1e-9)
    assert_allclose(basis.eigenvalues[3:8], 1.0 + 0.05 * 4.0, atol=1e-9)
    assert basis.lowest_eigenvalue == pytest.approx(1.0)


def test_weighted_basis(small_sphere):
    g = 1.0 + 0.3 * small_sphere.harmonic(2, 0)
    b = galerkin_basis(small_sphere, g, 0.02, gamma0=0.1, k=12)
    assert b.gram_defect <= 1e-9
    for w in b.fields:
        assert small_sphere.norm(sc.surface_divergence(small_sphere, g[:, None] * w)) <= 1e-8


def test_torus_basis(torus):
    b = galerkin_basis(torus, np.ones(torus.size), 0.05, k=10)
    assert b.k == 10
    assert b.gram_defect <= 1e-9
    assert np.all(np.diff(b.eigenvalues) >= -1e-12)


def test_trilinear_tensor_is_antisymmetric(small_sphere, basis):
    cfg = NSConfig(small_sphere, basis.fields[4], nu=0.05, variant="galerkin", k=basis.k)
    system = assemble(small_sphere, cfg, basis)
    B = system.B
    assert np.max(np.abs(B + B.transpose(0, 2, 1))) <= 1e-9 * max(np.max(np.abs(B)), 1.0)


def test_linear_run_matches_imex(small_sphere, basis):
    v0 = sc.vector_harmonic(small_sphere, 2, 0, "toroidal")
    common = dict(nu=0.05, dt=1e-3, T=0.1, nonlinear=False, snapshot_every=100)
    galerkin = galerkin_run(NSConfig(small_sphere, v0, variant="galerkin", k=30, **common), basis=basis)
    imex = imex_run(NSConfig(small_sphere, v0, **common))
    scale = small_sphere.norm(v0)
    assert small_sphere.norm(galerkin.final - imex.final) <= 1e-4 * scale
    assert galerkin.times == pytest.approx(imex.times)


def test_nonlinear_run_matches_imex(sphere):
    # amplitude 0.3, nu = 0.01, T = 0.5: the rotation advects the l = 2 mode, so the flow stays in the basis span
    v0 = 0.3 * (sc.vector_harmonic(sphere, 1, 0, "toroidal") + sc.vector_harmonic(sphere, 2, 1, "toroidal"))
    common = dict(nu=0.01, dt=1e-3, T=0.5, snapshot_every=500)
    galerkin = galerkin_run(NSConfig(sphere, v0, variant="galerkin", k=30, **common))
    imex = imex_run(NSConfig(sphere, v0, **common))
    assert galerkin.extra["basis"].k == 30
    assert sphere.norm(galerkin.final - imex.final) <= 1e-4 * sphere.norm(v0)
    assert sphere.norm(imex.final - v0) >= 5e-3 * sphere.norm(v0)


def test_energy_bound_constant(small_sphere, basis, rng):
    v0 = small_sphere.random_tangent(rng, 4)
    traj = galerkin_run(NSConfig(small_sphere, v0, nu=0.05, dt=1e-2, T=0.2, variant="galerkin"), basis=basis)
    assert traj.extra["energy_bound_constant"] >= 1.0
    assert traj.extra["coefficients"].shape == (21, basis.k)
    energies = [row["energy"] for row in traj.rows]
    assert energies[-1] <= energies[0]


def test_blow_up_is_reported(small_sphere, basis, rng):
    v0 = small_sphere.random_tangent(rng, 5)
    cfg = NSConfig(small_sphere, v0, nu=1.0, dt=10.0, T=5000.0, nonlinear=False, variant="galerkin")
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError):
            galerkin_run(cfg, basis=basis)
