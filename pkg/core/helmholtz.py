"""Weighted Poisson solves and Helmholtz-Leray decompositions on closed surfaces.

All elliptic problems are posed in the discrete weak sense: with the grid's
divergence being the exact quadrature adjoint of its gradient, the system
matrix W_q(-div(w grad . ) + s) is symmetric and CG applies directly.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from core.errors import ConsistencyError, PreconditionError
from core.fields import TangentField, WeightField, as_values
from core.linalg import DEFAULT_MAXITER, DEFAULT_TOL, pcg
from core.surfcalc import surface_divergence, tangential_gradient
from utils.logging_util import setup_logger

logger = setup_logger("helmholtz")

COMPATIBILITY_TOL = 1e-10
PRESSURE_TOL = 1e-8


@dataclass
class Decomposition:
    """Result of a Helmholtz-Leray split v = solenoidal + complement(q)."""

    kind: str
    solenoidal: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)
    complement: np.ndarray = field(repr=False)
    div_defect: float
    orthogonality_defect: float
    iterations: int
    residual: float
    tolerance: float

    def diagnostics(self):
        out = asdict(self)
        for key in ("solenoidal", "potential", "complement"):
            out.pop(key)
        return out

    def to_json(self):
        return json.dumps(self.diagnostics(), sort_keys=True)


def _preconditioner(grid, scale, shift):
    """Approximate inverse of W_q(-scale * Laplacian + shift), symmetric."""
    if grid.backend == "sphere":
        tr = grid.transform
        lam = scale * tr.degree * (tr.degree + 1.0) / grid.radius ** 2 + shift
        inv = np.divide(1.0, lam, out=np.zeros_like(lam), where=lam > 0)

        def apply(r):
            return tr.synthesis(tr.analysis(r / grid.weights) * inv)

        return apply

    kt = np.fft.fftfreq(grid.n_theta, d=1.0 / grid.n_theta)
    kp = np.fft.fftfreq(grid.n_phi, d=1.0 / grid.n_phi)
    kt[grid.n_theta // 2] = 0.0
    kp[grid.n_phi // 2] = 0.0
    symbol = scale * (kt[:, None] ** 2 / grid.r ** 2 + kp[None, :] ** 2 / grid.R ** 2) + shift
    inv = np.divide(1.0, symbol, out=np.zeros_like(symbol), where=symbol > 0)
    root = 1.0 / np.sqrt(grid.weights)

    def apply(r):
        s = (r * root).reshape(grid.n_theta, grid.n_phi)
        out = np.real(np.fft.ifft2(np.fft.fft2(s) * inv))
        return out.ravel() * root

    return apply


def _torus_null_basis(grid):
    """Grid functions with vanishing discrete gradient on the torus."""
    i = np.arange(grid.n_theta)[:, None]
    k = np.arange(grid.n_phi)[None, :]
    alt_t = np.broadcast_to((-1.0) ** i, (grid.n_theta, grid.n_phi))
    alt_p = np.broadcast_to((-1.0) ** k, (grid.n_theta, grid.n_phi))
    Z = np.stack([np.ones(grid.size), alt_t.ravel(), alt_p.ravel(), (alt_t * alt_p).ravel()], axis=1)
    return Z / np.sqrt(grid.size)


def _solve(grid, w, rhs, shift=None, tol=DEFAULT_TOL, maxiter=DEFAULT_MAXITER):
    """Solve -div(w grad q) + shift q = rhs in the discrete weak sense.

    Without a shift the operator is singular; the right-hand side is made
    compatible and q is returned in the zero-mean gauge.
    """
    singular = shift is None
    if grid.backend == "sphere":
        rhs = grid.project(rhs)
        if singular:
            rhs = rhs - grid.mean(rhs)
    b = grid.weights * rhs
    if singular and grid.backend == "torus":
        Z = _torus_null_basis(grid)
        b = b - Z @ (Z.T @ b)

    def apply_A(x):
        out = -grid.divergence_tangential(w[:, None] * grid.gradient(x))
        if shift is not None:
            out = out + shift * x
        return grid.weights * out

    mean_shift = 0.0 if shift is None else float(grid.mean(shift))
    M = _preconditioner(grid, float(grid.mean(w)), mean_shift)
    result = pcg(apply_A, b, M, tol=tol, maxiter=maxiter)
    q = result.x
    if singular:
        if grid.backend == "torus":
            Z = _torus_null_basis(grid)
            WZ = grid.weights[:, None] * Z
            q = q - Z @ np.linalg.solve(Z.T @ WZ, WZ.T @ q)
        q = q - grid.mean(q)
    logger.debug(f"elliptic solve: {result.iterations} iterations, relative residual {result.residual:.2e}")
    return q, result


def poisson_solve(grid, eta, w=None, tol=DEFAULT_TOL, maxiter=DEFAULT_MAXITER, return_info=False):
    """Zero-mean solution q of -div_Gamma(w grad_Gamma q) = eta.

    Args:
        grid: Surface grid.
        eta: Source with zero mean.
        w: Positive weight (1 if None).
        tol: Relative CG residual.
        maxiter: CG iteration cap.
        return_info: Also return the CGResult.

    Raises:
        PreconditionError: eta does not integrate to zero.
        SolverError: CG failed to converge.
    """
    eta = as_values(grid, eta, "scalar")
    w = np.ones(grid.size) if w is None else WeightField(grid, w).values
    total = float(grid.integrate(eta))
    scale = grid.norm(eta) * np.sqrt(grid.area)
    if abs(total) > COMPATIBILITY_TOL * max(scale, np.finfo(float).tiny):
        raise PreconditionError(f"Poisson source must have zero mean (integral {total:.3e})")
    q, info = _solve(grid, w, eta - total / grid.area, tol=tol, maxiter=maxiter)
    return (q, info) if return_info else q


def _finish(grid, kind, v, solenoidal, q, complement, g, info):
    div_defect = grid.norm(surface_divergence(grid, g[:, None] * solenoidal))
    weight = g if kind == "energy" else np.ones(grid.size)
    ortho = grid.inner(weight[:, None] * solenoidal, complement)
    scale = max(grid.inner(v, v), np.finfo(float).tiny)
    return Decomposition(kind, solenoidal, q, complement, div_defect, abs(ortho) / scale,
                         info.iterations, info.residual, DEFAULT_TOL)


def project_weighted(grid, v, g, tol=DEFAULT_TOL):
    """L2-orthogonal split v = v_g + g grad q with div_Gamma(g v_g) = 0."""
    v = TangentField(grid, v).values
    g = WeightField(grid, g).values
    rhs = -grid.divergence_tangential(g[:, None] * v)
    q, info = _solve(grid, g ** 2, rhs, tol=tol)
    complement = g[:, None] * grid.gradient(q)
    return _finish(grid, "weighted", v, v - complement, q, complement, g, info)


def project_energy(grid, v, g, tol=DEFAULT_TOL):
    """Split v = v_g + grad q, orthogonal in (g . , .), with div_Gamma(g v_g) = 0."""
    v = TangentField(grid, v).values
    g = WeightField(grid, g).values
    rhs = -grid.divergence_tangential(g[:, None] * v)
    q, info = _solve(grid, g, rhs, tol=tol)
    complement = grid.gradient(q)
    return _finish(grid, "energy", v, v - complement, q, complement, g, info)


def project_general(grid, v, tol=DEFAULT_TOL):
    """Split an ambient field v = v_s + grad q + q H n with div_Gamma v_s = 0.

    q solves -Delta q + H^2 q = -div_Gamma v; no gauge is needed since the
    integral of H^2 is positive.
    """
    v = as_values(grid, v, "vector")
    rhs = -surface_divergence(grid, v)
    q, info = _solve(grid, np.ones(grid.size), rhs, shift=grid.H ** 2, tol=tol)
    complement = tangential_gradient(grid, q) + (q * grid.H)[:, None] * grid.normal
    solenoidal = v - complement
    div_defect = grid.norm(surface_divergence(grid, solenoidal))
    ortho = grid.inner(solenoidal, complement) / max(grid.inner(v, v), np.finfo(float).tiny)
    return Decomposition("general", solenoidal, q, complement, div_defect, abs(ortho),
                         info.iterations, info.residual, tol)


def recover_pressure(grid, F, g, tol=PRESSURE_TOL):
    """Zero-mean q with g grad q = F.

    Raises:
        ConsistencyError: F is not a weighted gradient to within ``tol``.
    """
    F = as_values(grid, F, "vector")
    g = WeightField(grid, g).values
    f_norm = grid.norm(F)
    if f_norm == 0.0:
        return np.zeros(grid.size)
    rhs = -grid.divergence_tangential(g[:, None] * F)
    q, _ = _solve(grid, g ** 2, rhs)
    defect = grid.norm(g[:, None] * grid.gradient(q) - F) / f_norm
    if defect > tol:
        raise ConsistencyError(f"residual is not a weighted gradient (relative defect {defect:.3e})", defect)
    return q


def stability_ratio(grid, v, g):
    """||v - v_g|| / ||div_Gamma(g v)||, an L2 surrogate of the H^-1 stability bound."""
    v = TangentField(grid, v).values
    g = WeightField(grid, g).values
    dec = project_weighted(grid, v, g)
    div = grid.norm(grid.divergence_tangential(g[:, None] * v))
    if div == 0.0:
        return 0.0
    return grid.norm(v - dec.solenoidal) / div
