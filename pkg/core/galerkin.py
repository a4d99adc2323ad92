"""Galerkin approximation of the limit equations in eigenfields of the shifted energy form."""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import eigh

from core import surfcalc as sc
from core.errors import DivergenceError
from core.helmholtz import project_weighted
from core.nssolver import Trajectory, energy
from utils.logging_util import setup_logger

logger = setup_logger("galerkin")

RANK_TOL = 1e-10


@dataclass
class GalerkinBasis:
    """Fields w_i with (g w_i, w_j) = delta_ij, ordered by eigenvalue of a_g + (., .)."""

    fields: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    gram_defect: float
    k: int

    @property
    def lowest_eigenvalue(self):
        return float(self.eigenvalues[0])


def _spanning_degree(grid, k):
    degree = 1
    if grid.backend == "sphere":
        # toroidal harmonics with l <= degree
        while degree * (degree + 2) < k:
            degree += 1
    else:
        while 2 + 4 * degree * (degree + 1) < k:
            degree += 1
    return degree


def _gram(grid, fields, weight=None):
    w = grid.weights if weight is None else grid.weights * weight
    flat = fields.reshape(fields.shape[0], grid.size, -1)
    return np.einsum("anp,bnp,n->ab", flat, flat, w)


def form_matrix(grid, g, nu, gamma0, gamma1, fields):
    """Matrix of a_g on a stack of tangent fields, plus the L2 mass matrix."""
    D = np.stack([sc.strain_rate(grid, w) for w in fields])
    grad_g = sc.tangential_gradient(grid, g)
    s = np.einsum("anj,nj->an", fields, grad_g)
    visc = _gram(grid, D, g) + np.einsum("an,bn,n->ab", s, s, grid.weights / g)
    mass = _gram(grid, fields)
    A = 2.0 * nu * visc + (gamma0 + gamma1) * mass
    return 0.5 * (A + A.T), mass


def galerkin_basis(grid, g, nu, gamma0=0.0, gamma1=0.0, k=30, degree=None):
    """Build k eigenfields of a_g + (., .) in the weighted-solenoidal space.

    Args:
        grid: Surface grid.
        g: Positive weight (n,).
        nu, gamma0, gamma1: Coefficients of a_g.
        k: Requested dimension; reduced with a warning if the spanning set is too small.
        degree: Degree of the spanning set (chosen from k if None).

    Returns:
        GalerkinBasis.
    """
    degree = _spanning_degree(grid, k) if degree is None else degree
    span = sc.vector_spanning_set(grid, degree)
    projected = np.stack([project_weighted(grid, w, g).solenoidal for w in span])

    evals, evecs = eigh(_gram(grid, projected, g))
    keep = evals > RANK_TOL * evals.max()
    ortho = np.einsum("anj,ab->bnj", projected, evecs[:, keep] / np.sqrt(evals[keep]))
    if ortho.shape[0] < k:
        logger.warning(f"spanning set has rank {ortho.shape[0]} < k={k}; reducing k")
        k = ortho.shape[0]

    A, mass = form_matrix(grid, g, nu, gamma0, gamma1, ortho)
    lam, vecs = eigh(A + mass, _gram(grid, ortho, g))
    order = np.argsort(lam, kind="stable")[:k]
    fields = np.einsum("anj,ab->bnj", ortho, vecs[:, order])
    defect = float(np.max(np.abs(_gram(grid, fields, g) - np.eye(k))))
    logger.info(f"Galerkin basis: k={k}, spanning degree {degree}, lowest eigenvalue {lam[order][0]:.6f}")
    return GalerkinBasis(fields, lam[order], defect, k)


def trilinear_tensor(grid, g, fields):
    """B[i, l, j] = b_g(w_i, w_l, w_j) = -(g w_i (x) w_l, grad w_j)."""
    grads = np.stack([sc.tangential_gradient_matrix(grid, w) for w in fields])
    gw = (g * grid.weights)[None, :, None] * fields
    contracted = np.einsum("ina,jnab->ijnb", gw, grads)
    return -np.einsum("ijnb,lnb->ilj", contracted, fields)


@dataclass
class GalerkinSystem:
    """dxi/dt = -A xi - B(xi, xi) + F(t)."""

    basis: GalerkinBasis
    A: np.ndarray
    B: np.ndarray
    stiffness: np.ndarray

    def rhs(self, xi, forcing):
        return -self.A @ xi - np.einsum("i,l,ilj->j", xi, xi, self.B) + forcing


def assemble(grid, cfg, basis):
    A, _ = form_matrix(grid, cfg.g, cfg.nu, cfg.gamma0, cfg.gamma1, basis.fields)
    if cfg.nonlinear:
        B = trilinear_tensor(grid, cfg.g, basis.fields)
    else:
        B = np.zeros((basis.k,) * 3)
    grads = np.stack([sc.tangential_gradient_matrix(grid, w) for w in basis.fields])
    return GalerkinSystem(basis, A, B, _gram(grid, grads))


def _project(grid, cfg, basis, v):
    return np.einsum("anj,nj,n->a", basis.fields, cfg.g[:, None] * v, grid.weights)


def galerkin_run(cfg, basis=None):
    """Integrate the Galerkin ODE with classical RK4.

    Returns:
        Trajectory of v_k(t) = sum xi_i(t) w_i at the snapshots.  ``extra``
        holds the coefficient history, the basis and the empirical constant
        c in max_t |v_k|_g^2 + int |grad v_k|^2 <= c (|v0|_g^2 + int |f|^2).
    """
    grid = cfg.grid
    basis = basis or galerkin_basis(grid, cfg.g, cfg.nu, cfg.gamma0, cfg.gamma1, cfg.k)
    system = assemble(grid, cfg, basis)
    dt = cfg.dt

    def rhs(t, x):
        return system.rhs(x, _project(grid, cfg, basis, cfg.force_at(t)))

    def record(t, x):
        v = np.einsum("a,anj->nj", x, basis.fields)
        traj.append(t, v)
        traj.rows.append({
            "t": t,
            "energy": energy(grid, cfg.g, v),
            "enstrophy": float(x @ system.stiffness @ x),
            "div_defect": grid.norm(sc.surface_divergence(grid, cfg.g[:, None] * v)),
            "energy_defect": 0.0,
        })

    xi = _project(grid, cfg, basis, cfg.v0)
    traj = Trajectory()
    history = [xi.copy()]
    record(0.0, xi)
    for n in range(cfg.steps):
        t = n * dt
        k1 = rhs(t, xi)
        k2 = rhs(t + 0.5 * dt, xi + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, xi + 0.5 * dt * k2)
        k4 = rhs(t + dt, xi + dt * k3)
        xi = xi + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(xi)):
            raise DivergenceError(f"Galerkin coefficients blew up at t={(n + 1) * dt:.6g}")
        history.append(xi.copy())
        if (n + 1) % cfg.snapshot_every == 0 or n + 1 == cfg.steps:
            record((n + 1) * dt, xi)

    history = np.array(history)
    times = dt * np.arange(len(history))
    kinetic = np.einsum("ta,ta->t", history, history)
    dissipation = np.einsum("ta,ab,tb->t", history, system.stiffness, history)
    force_sq = np.array([grid.norm(cfg.force_at(s)) ** 2 for s in times])
    if len(times) > 1:
        lhs = kinetic.max() + trapezoid(dissipation, times)
        denom = kinetic[0] + trapezoid(force_sq, times)
    else:
        lhs, denom = kinetic.max(), kinetic[0]
    bound = float(lhs / denom) if denom > 0 else 0.0
    traj.extra.update(coefficients=history, coefficient_times=times, basis=basis,
                      energy_bound_constant=bound)
    logger.info(f"Galerkin run: k={basis.k}, {cfg.steps} RK4 steps, energy bound constant {bound:.4g}")
    return traj
