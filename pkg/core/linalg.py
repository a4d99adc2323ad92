"""Preconditioned conjugate gradient for symmetric positive (semi)definite operators."""

from dataclasses import dataclass

import numpy as np

from core.errors import SolverError

DEFAULT_TOL = 1e-11
DEFAULT_MAXITER = 500


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg(apply_A, b, apply_M=None, x0=None, tol=DEFAULT_TOL, maxiter=DEFAULT_MAXITER, raise_on_failure=True):
    """Solve A x = b by preconditioned CG.

    Args:
        apply_A: Callable x -> A x; A symmetric in the Euclidean dot product.
        b: Right-hand side (flat array).
        apply_M: Callable r -> M r approximating A^-1 (symmetric). Identity if None.
        x0: Initial guess (zero if None).
        tol: Stop when ||r|| <= tol * ||b||.
        maxiter: Iteration cap.
        raise_on_failure: Raise SolverError instead of returning an unconverged result.

    Returns:
        CGResult with the final relative residual.
    """
    apply_M = apply_M or (lambda r: r)
    b = np.asarray(b, dtype=float)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_A(x) if x0 is not None else b.copy()
    z = apply_M(r)
    d = z.copy()
    rz = float(np.dot(r, z))
    rel = np.linalg.norm(r) / b_norm
    k = 0
    while rel > tol and k < maxiter and rz != 0.0:
        Ad = apply_A(d)
        dAd = float(np.dot(d, Ad))
        if dAd <= 0.0:
            break
        alpha = rz / dAd
        x = x + alpha * d
        r = r - alpha * Ad
        z = apply_M(r)
        rz_new = float(np.dot(r, z))
        d = z + (rz_new / rz) * d
        rz = rz_new
        rel = np.linalg.norm(r) / b_norm
        k += 1

    converged = rel <= tol
    if not converged and raise_on_failure:
        raise SolverError(
            f"conjugate gradient did not converge in {k} iterations (relative residual {rel:.3e})",
            residual=rel,
            iterations=k,
        )
    return CGResult(x, k, float(rel), converged)
