"""Weighted, damped surface Navier-Stokes limit equations.

    g(dv/dt + nabla-bar_v v) - 2 nu {P div[g D(v)] - (1/g)(v . grad g) grad g}
        + (gamma0 + gamma1) v + g grad q = g f,     div(g v) = 0

The IMEX solver divides by g and advances

    dv/dt = L v + E(v) - grad q + f

with L = nu (Delta_B + Ric) - gamma / c0 treated by Crank-Nicolson (diagonal in
toroidal/poloidal potentials on the sphere, c0 = mean g) and the remainder
E by second order Adams-Bashforth, followed by the projection that is
orthogonal in the g-weighted inner product.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from core import surfcalc as sc
from core.errors import ConfigurationError, DivergenceError
from core.fields import TangentField, WeightField, as_values
from core.helmholtz import project_energy, recover_pressure
from core.run_storage import write_field_dump
from utils.logging_util import setup_logger

logger = setup_logger("nssolver")

VARIANTS = ("imex", "galerkin")
DIAGNOSTIC_COLUMNS = ["t", "energy", "enstrophy", "div_defect", "energy_defect"]


@dataclass
class NSConfig:
    """Parameters of a limit-equation run.

    ``force`` is a callable t -> (n, 3) array, a fixed (n, 3) array or None.
    ``v0`` is projected into the discrete weighted-solenoidal space on
    construction; the removed part is logged.
    """

    grid: object
    v0: np.ndarray
    nu: float = 1e-2
    gamma0: float = 0.0
    gamma1: float = 0.0
    g: Optional[np.ndarray] = None
    force: Optional[object] = None
    dt: float = 1e-3
    T: float = 1.0
    dealias: bool = True
    nonlinear: bool = True
    variant: str = "imex"
    k: int = 30
    snapshot_every: int = 1
    v0_defect: float = field(default=0.0, init=False)

    def __post_init__(self):
        errors = []
        if not self.nu > 0:
            errors.append(f"nu must be > 0 (got {self.nu})")
        if self.gamma0 < 0 or self.gamma1 < 0:
            errors.append(f"gamma0, gamma1 must be >= 0 (got {self.gamma0}, {self.gamma1})")
        if not self.dt > 0:
            errors.append(f"dt must be > 0 (got {self.dt})")
        if self.T < 0:
            errors.append(f"T must be >= 0 (got {self.T})")
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS} (got {self.variant})")
        if self.variant == "galerkin" and self.k < 1:
            errors.append(f"Galerkin dimension k must be >= 1 (got {self.k})")
        if self.variant == "imex" and self.grid.backend != "sphere":
            errors.append("the imex variant requires the sphere backend; use variant=galerkin on the torus")
        try:
            weight = WeightField.constant(self.grid) if self.g is None else WeightField(self.grid, self.g)
            self.g = weight.values
        except ConfigurationError as e:
            errors.extend(e.violations)
        if errors:
            raise ConfigurationError(errors)

        v0 = TangentField(self.grid, self.v0).values
        dec = project_energy(self.grid, v0, self.g)
        self.v0_defect = self.grid.norm(v0 - dec.solenoidal)
        if self.v0_defect > 1e-10 * max(self.grid.norm(v0), 1.0):
            logger.warning(f"initial velocity projected onto div(g v) = 0 (removed part {self.v0_defect:.3e})")
        self.v0 = dec.solenoidal

    @property
    def gamma(self):
        return self.gamma0 + self.gamma1

    @property
    def c0(self):
        return float(self.grid.mean(self.g))

    @property
    def weight_is_constant(self):
        return bool(np.ptp(self.g) == 0.0)

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def force_at(self, t):
        if self.force is None:
            return np.zeros((self.grid.size, 3))
        f = self.force(t) if callable(self.force) else self.force
        return self.grid.tangential(as_values(self.grid, f, "vector"))


@dataclass
class NSState:
    t: float
    v: np.ndarray
    q: np.ndarray
    explicit: Optional[np.ndarray] = None
    pressure_gradient: Optional[np.ndarray] = None
    step: int = 0


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    pressures: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def append(self, t, v, q=None):
        self.times.append(float(t))
        self.velocities.append(np.array(v))
        self.pressures.append(None if q is None else np.array(q))

    @property
    def final(self):
        return self.velocities[-1]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(DIAGNOSTIC_COLUMNS)
            for row in self.rows:
                writer.writerow([f"{row[c]:.10e}" for c in DIAGNOSTIC_COLUMNS])
        return path


# bilinear and trilinear forms


def bilinear_form_a(grid, g, nu, gamma0, gamma1, v1, v2):
    """a_g(v1, v2) = 2 nu [(g D v1, D v2) + ((1/g)(v1 . grad g), v2 . grad g)] + gamma (v1, v2)."""
    g = as_values(grid, g, "scalar")
    D1, D2 = sc.strain_rate(grid, v1), sc.strain_rate(grid, v2)
    grad_g = sc.tangential_gradient(grid, g)
    s1 = np.sum(v1 * grad_g, axis=-1)
    s2 = np.sum(v2 * grad_g, axis=-1)
    visc = grid.inner(g[:, None, None] * D1, D2) + grid.inner(s1 / g, s2)
    return 2.0 * nu * visc + (gamma0 + gamma1) * grid.inner(v1, v2)


def trilinear_form_b(grid, g, v1, v2, v3, dealias=True):
    """b_g(v1, v2, v3) = -(g (v1 x v2), grad_Gamma v3).

    With ``dealias`` the product g v1 (x) v2 is truncated by the 2/3 rule
    before it is paired with the gradient.  dealias=False gives the
    full-resolution form used by the Galerkin tensor.
    """
    g = as_values(grid, g, "scalar")
    prod = g[:, None, None] * np.einsum("ni,nj->nij", v1, v2)
    if dealias:
        flat = prod.reshape(grid.size, 9).T
        prod = grid.dealias(flat).T.reshape(grid.size, 3, 3)
    return -grid.inner(prod, sc.tangential_gradient_matrix(grid, v3))


def nonlinear_term(grid, v, dealias=True):
    """nabla-bar_v v = P (grad v)^T v, with 2/3-rule truncation of inputs and product."""
    v = as_values(grid, v, "vector")
    if dealias:
        v = np.moveaxis(grid.dealias(np.moveaxis(v, -1, 0)), 0, -1)
    G = sc.tangential_gradient_matrix(grid, v)
    out = np.einsum("nij,ni->nj", G, v)
    if dealias:
        out = np.moveaxis(grid.dealias(np.moveaxis(out, -1, 0)), 0, -1)
    return grid.tangential(out)


def viscous_operator(grid, g, nu, v):
    """(2 nu / g){P div[g D(v)] - (1/g)(v . grad g) grad g}."""
    grad_g = sc.tangential_gradient(grid, g)
    s = np.sum(v * grad_g, axis=-1) / g
    return (2.0 * nu / g)[:, None] * (sc.viscous_term(grid, g, v) - s[:, None] * grad_g)


def momentum_rhs(grid, cfg, v, t):
    """Everything in dv/dt except the pressure gradient (equation divided by g)."""
    rhs = viscous_operator(grid, cfg.g, cfg.nu, v) - (cfg.gamma / cfg.g)[:, None] * v + cfg.force_at(t)
    if cfg.nonlinear:
        rhs = rhs - nonlinear_term(grid, v, cfg.dealias)
    return rhs


def pressure_from_state(grid, cfg, v, t):
    """Pressure of the current state from the momentum residual.

    The pressure gradient is the g-orthogonal complement part of the
    right-hand side; q is then recovered from F = g grad q.
    """
    rhs = momentum_rhs(grid, cfg, v, t)
    dec = project_energy(grid, rhs, cfg.g)
    F = cfg.g[:, None] * dec.complement
    return recover_pressure(grid, F, cfg.g), dec.complement


def manufactured_force(grid, v_star, g, nu, gamma=0.0, nonlinear=True, dealias=True):
    """Force making v_star a stationary solution with zero pressure."""
    g = as_values(grid, g, "scalar")
    f = -viscous_operator(grid, g, nu, v_star) + (gamma / g)[:, None] * v_star
    if nonlinear:
        f = f + nonlinear_term(grid, v_star, dealias)
    return grid.tangential(f)


def stationary_residuals(grid, v, q, nu):
    """Stationary residuals for g = 1, f = 0, no damping.

    Returns the residual norms of the limit equation
    nabla-bar_v v - nu(Delta_B v + v) + grad q, and of the variant with the
    opposite zeroth-order sign, nabla-bar_v v - nu(Delta_B v - v) + grad q.
    """
    common = sc.covariant_derivative(grid, v, v) + sc.tangential_gradient(grid, q)
    lap_b = sc.bochner_laplacian(grid, v)
    limit = common - nu * (lap_b + v)
    hodge_variant = common - nu * (lap_b - v)
    return grid.norm(limit), grid.norm(hodge_variant)


# spectral potentials on the sphere


def _potential_coefficients(grid, v):
    tr = grid.transform
    lam = tr.degree * (tr.degree + 1.0) / grid.radius ** 2
    inv = np.divide(1.0, lam, out=np.zeros_like(lam), where=lam > 0)
    div_c = tr.analysis(grid.divergence_tangential(v))
    curl_c = tr.analysis(grid.divergence_tangential(np.cross(grid.normal, v)))
    return -div_c * inv, curl_c * inv


def _from_potentials(grid, c_psi, c_chi):
    grad_psi = grid.gradient_from_coefficients(c_psi)
    grad_chi = grid.gradient_from_coefficients(c_chi)
    return grad_psi + np.cross(grid.normal, grad_chi)


def apply_degree_multiplier(grid, v, multiplier):
    """Multiply the toroidal and poloidal potentials of v by multiplier[l]."""
    c_psi, c_chi = _potential_coefficients(grid, v)
    m = multiplier(grid.transform.degree)
    return _from_potentials(grid, c_psi * m, c_chi * m)


def implicit_eigenvalues(cfg, degree):
    a = cfg.grid.radius
    return -cfg.nu * (degree * (degree + 1.0) - 2.0) / a ** 2 - cfg.gamma / cfg.c0


def _explicit_terms(grid, cfg, v, t):
    out = cfg.force_at(t)
    if cfg.nonlinear:
        out = out - nonlinear_term(grid, v, cfg.dealias)
    if not cfg.weight_is_constant:
        implicit_visc = apply_degree_multiplier(
            grid, v, lambda l: -cfg.nu * (l * (l + 1.0) - 2.0) / grid.radius ** 2
        )
        out = out + viscous_operator(grid, cfg.g, cfg.nu, v) - implicit_visc
        out = out - (cfg.gamma / cfg.g - cfg.gamma / cfg.c0)[:, None] * v
    return out


def initial_state(cfg):
    grid = cfg.grid
    q, grad_q = pressure_from_state(grid, cfg, cfg.v0, 0.0)
    return NSState(0.0, cfg.v0.copy(), q, None, grad_q, 0)


def imex_step(state, cfg):
    """One CNAB2 step with incremental pressure projection.

    The first step uses the current explicit term in place of the
    Adams-Bashforth extrapolation.
    Logs a warning when the CFL heuristic |v| dt / h of the incoming state
    exceeds 1.
    """
    grid = cfg.grid
    if state.v.shape != (grid.size, 3):
        raise ConfigurationError("state does not match the configured grid")
    dt = cfg.dt
    cfl = cfl_number(grid, cfg, state.v)
    if cfl > 1.0:
        logger.warning(f"CFL heuristic exceeded at t={state.t:.4g} (|v| dt / h = {cfl:.3g})")
    explicit = _explicit_terms(grid, cfg, state.v, state.t)
    previous = explicit if state.explicit is None else state.explicit
    extrapolated = 1.5 * explicit - 0.5 * previous
    grad_q = np.zeros_like(state.v) if state.pressure_gradient is None else state.pressure_gradient

    def half_step(l):
        return 1.0 + 0.5 * dt * implicit_eigenvalues(cfg, l)

    def inverse_half_step(l):
        return 1.0 / (1.0 - 0.5 * dt * implicit_eigenvalues(cfg, l))

    rhs = apply_degree_multiplier(grid, state.v, half_step) + dt * (extrapolated - grad_q)
    predicted = apply_degree_multiplier(grid, rhs, inverse_half_step)
    dec = project_energy(grid, predicted, cfg.g)
    v_new = dec.solenoidal
    grad_q = grad_q + dec.complement / dt
    if not np.all(np.isfinite(v_new)):
        raise DivergenceError(f"non-finite velocity at t={state.t + dt:.6g}")
    q = recover_pressure(grid, cfg.g[:, None] * grad_q, cfg.g)
    return NSState(state.t + dt, v_new, q, explicit, grad_q, state.step + 1)


def energy(grid, g, v):
    return 0.5 * grid.inner(g[:, None] * v, v)


def _diagnostic_row(grid, cfg, t, v, energy_defect):
    G = sc.tangential_gradient_matrix(grid, v)
    return {
        "t": t,
        "energy": energy(grid, cfg.g, v),
        "enstrophy": grid.inner(G, G),
        "div_defect": grid.norm(sc.surface_divergence(grid, cfg.g[:, None] * v)),
        "energy_defect": energy_defect,
    }


def energy_defect(grid, cfg, v_old, v_new, t_old):
    """|dE/dt + a_g(v_mid, v_mid) - (g f, v_mid)| for one step."""
    mid = 0.5 * (v_old + v_new)
    d_energy = (energy(grid, cfg.g, v_new) - energy(grid, cfg.g, v_old)) / cfg.dt
    a = bilinear_form_a(grid, cfg.g, cfg.nu, cfg.gamma0, cfg.gamma1, mid, mid)
    f = 0.5 * (cfg.force_at(t_old) + cfg.force_at(t_old + cfg.dt))
    work = grid.inner(cfg.g[:, None] * f, mid)
    return abs(d_energy + a - work)


def cfl_number(grid, cfg, v):
    return float(np.max(np.linalg.norm(v, axis=-1)) * cfg.dt / grid.h)


def imex_run(cfg, dump_dir=None):
    """Integrate to cfg.T and collect snapshots and per-step diagnostics."""
    grid = cfg.grid
    state = initial_state(cfg)
    traj = Trajectory()
    traj.append(state.t, state.v, state.q)
    traj.rows.append(_diagnostic_row(grid, cfg, state.t, state.v, 0.0))
    logger.info(f"imex run: {cfg.steps} steps, dt={cfg.dt}, nu={cfg.nu}, L={grid.bandlimit}")

    for n in range(cfg.steps):
        new = imex_step(state, cfg)
        defect = energy_defect(grid, cfg, state.v, new.v, state.t)
        state = new
        if (n + 1) % cfg.snapshot_every == 0 or n + 1 == cfg.steps:
            traj.append(state.t, state.v, state.q)
            traj.rows.append(_diagnostic_row(grid, cfg, state.t, state.v, defect))
            if dump_dir is not None:
                write_field_dump(f"{dump_dir}/v_{state.step:06d}.snsf", state.v, state.t)
        logger.debug(f"step {state.step}: t={state.t:.4f} energy={energy(grid, cfg.g, state.v):.6e}")
    return traj


def energy_report(traj, cfg):
    """Per-interval energy defect between consecutive snapshots."""
    grid = cfg.grid
    rows = []
    for i in range(1, len(traj.times)):
        dt = traj.times[i] - traj.times[i - 1]
        v_old, v_new = traj.velocities[i - 1], traj.velocities[i]
        mid = 0.5 * (v_old + v_new)
        d_energy = (energy(grid, cfg.g, v_new) - energy(grid, cfg.g, v_old)) / dt
        a = bilinear_form_a(grid, cfg.g, cfg.nu, cfg.gamma0, cfg.gamma1, mid, mid)
        f = 0.5 * (cfg.force_at(traj.times[i - 1]) + cfg.force_at(traj.times[i]))
        work = grid.inner(cfg.g[:, None] * f, mid)
        rows.append({"t": traj.times[i], "dE_dt": d_energy, "dissipation": a, "work": work,
                     "defect": abs(d_energy + a - work)})
    return rows


def weak_residual(traj, cfg, test_fields):
    """Time-integrated weak-form residual against weighted-solenoidal test fields.

    For each eta:
        (g v(T), eta) - (g v(0), eta) + int_0^T [a_g(v, eta) + b_g(v, v, eta) - (g f, eta)] dt
    with the time integral by the trapezoid rule over the snapshots.
    """
    grid = cfg.grid
    times = np.asarray(traj.times)
    out = []
    for idx, eta in enumerate(test_fields):
        integrand = []
        for t, v in zip(traj.times, traj.velocities):
            a = bilinear_form_a(grid, cfg.g, cfg.nu, cfg.gamma0, cfg.gamma1, v, eta)
            b = trilinear_form_b(grid, cfg.g, v, v, eta, cfg.dealias) if cfg.nonlinear else 0.0
            work = grid.inner(cfg.g[:, None] * cfg.force_at(t), eta)
            integrand.append(a + b - work)
        integral = trapezoid(integrand, times) if len(times) > 1 else 0.0
        change = grid.inner(cfg.g[:, None] * (traj.velocities[-1] - traj.velocities[0]), eta)
        out.append({"test_field": idx, "residual": abs(change + integral)})
    return out
