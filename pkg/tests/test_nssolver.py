import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core import surfcalc as sc
from core.errors import ConfigurationError
from core.helmholtz import project_weighted
from core.nssolver import (DIAGNOSTIC_COLUMNS, NSConfig, bilinear_form_a, energy, energy_defect, energy_report,
                           imex_run, imex_step, initial_state, manufactured_force, nonlinear_term,
                           pressure_from_state, stationary_residuals, trilinear_form_b, weak_residual)
from core.run_storage import read_field_dump


def killing(grid):
    return sc.killing_field(grid, (0.0, 0.0, 1.0))


def test_config_collects_violations(small_sphere):
    with pytest.raises(ConfigurationError) as err:
        NSConfig(small_sphere, killing(small_sphere), nu=-1.0, dt=0.0)
    assert len(err.value.violations) == 2
    assert any("nu" in v for v in err.value.violations)


def test_imex_requires_sphere(torus):
    with pytest.raises(ConfigurationError):
        NSConfig(torus, killing(torus), variant="imex")
    NSConfig(torus, killing(torus), variant="galerkin")


def test_initial_velocity_is_projected(small_sphere, rng):
    v0 = small_sphere.random_tangent(rng, 4)
    cfg = NSConfig(small_sphere, v0, T=0.0)
    assert cfg.v0_defect > 0
    assert small_sphere.norm(sc.surface_divergence(small_sphere, cfg.v0)) < 1e-8


def test_killing_field_has_no_dissipation(sphere):
    v = killing(sphere)
    assert abs(bilinear_form_a(sphere, np.ones(sphere.size), 0.1, 0.0, 0.0, v, v)) < 1e-10
    assert bilinear_form_a(sphere, np.ones(sphere.size), 0.1, 0.2, 0.0, v, v) > 0


@pytest.mark.parametrize("weighted", [False, True])
def test_trilinear_form_vanishes_on_diagonal(sphere, rng, weighted):
    g = 1.0 + 0.3 * sphere.harmonic(2, 0) if weighted else np.ones(sphere.size)
    v = project_weighted(sphere, sphere.random_tangent(rng, 5), g).solenoidal
    assert abs(trilinear_form_b(sphere, g, v, v, v, dealias=False)) <= 1e-9


def test_killing_field_is_stationary(small_sphere):
    cfg = NSConfig(small_sphere, killing(small_sphere), nu=0.01, dt=1e-3, T=0.05, snapshot_every=10)
    traj = imex_run(cfg)
    v0 = traj.velocities[0]
    assert small_sphere.norm(traj.final - v0) / small_sphere.norm(v0) <= 1e-5
    bernoulli = 0.5 * np.sum(v0 ** 2, axis=1)
    assert_allclose(traj.pressures[-1], bernoulli - small_sphere.mean(bernoulli), atol=1e-6)
    assert [row["t"] for row in traj.rows] == pytest.approx([0.0, 0.01, 0.02, 0.03, 0.04, 0.05])


def test_initial_pressure_is_bernoulli(small_sphere):
    cfg = NSConfig(small_sphere, killing(small_sphere), T=0.0)
    q, _ = pressure_from_state(small_sphere, cfg, cfg.v0, 0.0)
    bernoulli = 0.5 * np.sum(cfg.v0 ** 2, axis=1)
    assert_allclose(q, bernoulli - small_sphere.mean(bernoulli), atol=1e-8)


def test_stationary_residual_sign(small_sphere):
    v = killing(small_sphere)
    q = 0.5 * np.sum(v ** 2, axis=1)
    limit, hodge_variant = stationary_residuals(small_sphere, v, q, 0.1)
    assert limit < 1e-8
    assert hodge_variant > 0.1 * small_sphere.norm(v)


def test_linear_mode_decay(small_sphere):
    nu, T = 0.05, 0.2
    v0 = sc.vector_harmonic(small_sphere, 2, 0, "toroidal")
    cfg = NSConfig(small_sphere, v0, nu=nu, dt=1e-3, T=T, nonlinear=False, snapshot_every=50)
    traj = imex_run(cfg)
    ratio = small_sphere.norm(traj.final) / small_sphere.norm(v0)
    assert abs(ratio - np.exp(-4.0 * nu * T)) <= 1e-3 * np.exp(-4.0 * nu * T)


def test_damping_adds_to_decay(small_sphere):
    v0 = sc.vector_harmonic(small_sphere, 2, 0, "toroidal")
    cfg = NSConfig(small_sphere, v0, nu=0.05, gamma0=0.1, gamma1=0.1, dt=1e-3, T=0.1, nonlinear=False,
                   snapshot_every=100)
    ratio = small_sphere.norm(imex_run(cfg).final) / small_sphere.norm(cfg.v0)
    assert abs(ratio - np.exp(-(0.2 + 0.05 * 4) * 0.1)) <= 1e-4


def test_energy_identity(small_sphere, rng):
    v0 = small_sphere.random_tangent(rng, 4)
    cfg = NSConfig(small_sphere, v0, nu=0.02, dt=1e-3, T=0.01, nonlinear=False)
    state = initial_state(cfg)
    for _ in range(5):
        new = imex_step(state, cfg)
        assert energy_defect(small_sphere, cfg, state.v, new.v, state.t) <= 1e-6
        assert energy(small_sphere, cfg.g, new.v) <= energy(small_sphere, cfg.g, state.v) + 1e-12
        state = new


def test_manufactured_force_keeps_state(small_sphere):
    grid = small_sphere
    g = 1.0 + 0.3 * grid.harmonic(2, 0)
    v_star = project_weighted(grid, sc.vector_harmonic(grid, 2, 1, "toroidal"), g).solenoidal
    f = manufactured_force(grid, v_star, g, 0.02, gamma=0.1)
    cfg = NSConfig(grid, v_star, nu=0.02, gamma0=0.1, g=g, force=f, dt=1e-3, T=0.02, snapshot_every=20)
    traj = imex_run(cfg)
    assert grid.norm(traj.final - cfg.v0) <= 1e-8 * grid.norm(cfg.v0)
    assert max(row["div_defect"] for row in traj.rows) <= 1e-9


def test_weak_residual_of_stationary_run(small_sphere):
    cfg = NSConfig(small_sphere, killing(small_sphere), dt=1e-3, T=0.01, snapshot_every=1)
    traj = imex_run(cfg)
    tests = [sc.vector_harmonic(small_sphere, 1, 0, "toroidal"), sc.vector_harmonic(small_sphere, 2, 1, "toroidal")]
    for row in weak_residual(traj, cfg, tests):
        assert row["residual"] <= 1e-8


def test_trajectory_csv_and_dumps(small_sphere, tmp_path):
    cfg = NSConfig(small_sphere, killing(small_sphere), dt=1e-3, T=0.003)
    traj = imex_run(cfg, dump_dir=str(tmp_path))
    path = traj.write_csv(tmp_path / "diag.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(DIAGNOSTIC_COLUMNS)
    assert len(lines) == 1 + 4
    values, t = read_field_dump(tmp_path / "v_000003.snsf")
    assert t == pytest.approx(0.003)
    assert_allclose(values, traj.final)


def rotated(grid, v, R):
    """Nodal values of x -> R v(R^T x)."""
    back = grid.points @ R
    comps = np.stack([grid.evaluate(v[:, k], back) for k in range(3)], axis=-1)
    return comps @ R.T


def test_rotating_the_data_rotates_the_flow(small_sphere):
    grid = small_sphere
    c, s = np.cos(0.7), np.sin(0.7)
    R = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]) @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    v0 = sc.vector_harmonic(grid, 2, 1, "toroidal") + 0.5 * sc.vector_harmonic(grid, 3, 0, "toroidal")
    common = dict(nu=0.05, dt=1e-3, T=0.02, snapshot_every=20)
    plain = imex_run(NSConfig(grid, v0, **common))
    turned = imex_run(NSConfig(grid, rotated(grid, v0, R), **common))
    assert grid.norm(turned.final - rotated(grid, plain.final, R)) <= 1e-8 * grid.norm(v0)


def test_config_rejects_nonpositive_weight(small_sphere):
    with pytest.raises(ConfigurationError) as err:
        NSConfig(small_sphere, killing(small_sphere), nu=-1.0, g=small_sphere.harmonic(2, 0))
    assert len(err.value.violations) == 2
    assert any("weight" in v for v in err.value.violations)


def test_config_drops_normal_part_of_v0(small_sphere):
    v = killing(small_sphere)
    cfg = NSConfig(small_sphere, v + 0.5 * small_sphere.normal, T=0.0)
    assert_allclose(cfg.v0, v, atol=1e-10)
    assert cfg.v0_defect <= 1e-10


def test_trilinear_form_is_dealiased_by_default(small_sphere):
    grid = small_sphere
    g = np.ones(grid.size)
    u, w, eta = (sc.vector_harmonic(grid, l, m, "toroidal") for l, m in ((2, 1), (3, 0), (3, 1)))
    default = trilinear_form_b(grid, g, u, w, eta)
    assert default == trilinear_form_b(grid, g, u, w, eta, dealias=True)
    # low degree products lie below the 2/3 cutoff
    assert default == pytest.approx(trilinear_form_b(grid, g, u, w, eta, dealias=False), abs=1e-12)


@pytest.mark.parametrize("weighted", [False, True])
def test_nonlinear_term_is_dual_to_trilinear_form(sphere, rng, weighted):
    g = 1.0 + 0.3 * sphere.harmonic(2, 0) if weighted else np.ones(sphere.size)
    v = project_weighted(sphere, sphere.random_tangent(rng, 5), g).solenoidal
    w = sphere.random_tangent(rng, 5)
    paired = sphere.inner(g[:, None] * nonlinear_term(sphere, v, dealias=False), w)
    form = trilinear_form_b(sphere, g, v, v, w, dealias=False)
    assert abs(paired - form) <= 1e-9 * max(abs(form), 1.0)


def test_energy_report_matches_step_defects(small_sphere, rng):
    cfg = NSConfig(small_sphere, small_sphere.random_tangent(rng, 4), nu=0.02, dt=1e-3, T=0.005, nonlinear=False)
    traj = imex_run(cfg)
    report = energy_report(traj, cfg)
    assert len(report) == 5
    assert set(report[0]) == {"t", "dE_dt", "dissipation", "work", "defect"}
    for row, step in zip(report, traj.rows[1:]):
        assert row["t"] == pytest.approx(step["t"])
        assert row["defect"] == pytest.approx(step["energy_defect"], rel=1e-9, abs=1e-12)
        assert row["defect"] <= 1e-6
        assert row["dE_dt"] < 0 < row["dissipation"]
        assert row["work"] == 0.0


def mixed_modes(grid):
    return (sc.vector_harmonic(grid, 2, 1, "toroidal") + 0.7 * sc.vector_harmonic(grid, 3, 0, "toroidal")
            + 0.5 * sc.vector_harmonic(grid, 3, 2, "toroidal"))


def test_energy_defect_is_second_order(sphere):
    # snapshots every 4 ms skip the first-order starting step
    totals = []
    for dt, every in ((2e-3, 2), (1e-3, 4)):
        cfg = NSConfig(sphere, mixed_modes(sphere), nu=0.01, dt=dt, T=0.02, snapshot_every=every)
        traj = imex_run(cfg)
        assert [row["t"] for row in traj.rows] == pytest.approx([0.0, 0.004, 0.008, 0.012, 0.016, 0.02])
        totals.append(sum(row["energy_defect"] for row in traj.rows[1:]))
    assert 3.4 <= totals[0] / totals[1] <= 4.6


def test_imex_is_second_order_in_time(small_sphere):
    finals = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        cfg = NSConfig(small_sphere, mixed_modes(small_sphere), nu=0.01, dt=dt, T=0.2, snapshot_every=1000)
        finals.append(imex_run(cfg).final)
    coarse = small_sphere.norm(finals[0] - finals[1])
    fine = small_sphere.norm(finals[1] - finals[2])
    assert np.log2(coarse / fine) >= 1.9


def test_step_warns_when_cfl_exceeded(small_sphere, caplog):
    fast = NSConfig(small_sphere, killing(small_sphere), dt=0.5, T=0.0)
    with caplog.at_level(logging.WARNING, logger="nssolver"):
        imex_step(initial_state(fast), fast)
    assert any("CFL" in record.getMessage() for record in caplog.records)

    caplog.clear()
    slow = NSConfig(small_sphere, killing(small_sphere), dt=1e-3, T=0.0)
    with caplog.at_level(logging.WARNING, logger="nssolver"):
        imex_step(initial_state(slow), slow)
    assert not any("CFL" in record.getMessage() for record in caplog.records)
