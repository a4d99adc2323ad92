"""Identity checks for the surface operators on random fields."""

import csv
from dataclasses import asdict, dataclass

import numpy as np

from core import surfcalc as sc
from utils.logging_util import setup_logger

logger = setup_logger("surfcalc")

DEFAULT_SEED = 0x5EED
CSV_COLUMNS = ["identity", "backend", "resolution", "residual_max", "residual_l2", "seed"]


@dataclass
class OperatorReport:
    identity: str
    backend: str
    resolution: str
    residual_max: float
    residual_l2: float
    seed: int

    def __post_init__(self):
        self.residual_max = abs(float(self.residual_max))
        self.residual_l2 = abs(float(self.residual_l2))


def resolution_label(grid):
    if grid.backend == "sphere":
        return f"L{grid.bandlimit}"
    return f"{grid.n_theta}x{grid.n_phi}"


def _report(grid, name, residual, seed):
    residual = np.asarray(residual, dtype=float)
    if residual.ndim == 0:
        rmax = rl2 = abs(float(residual))
    else:
        rmax = float(np.max(np.abs(residual)))
        rl2 = grid.norm(residual)
    return OperatorReport(name, grid.backend, resolution_label(grid), rmax, rl2, seed)


def _default_degree(grid):
    return 10 if grid.backend == "sphere" else 4


def run_identity_suite(grid, seed=DEFAULT_SEED, degree=None):
    """Evaluate every surface identity on seeded random fields.

    Args:
        grid: SphereGrid or TorusGrid.
        seed: Seed for the random fields.
        degree: Maximum degree of the random fields (backend default if None).

    Returns:
        List of OperatorReport, one per identity.
    """
    degree = _default_degree(grid) if degree is None else degree
    rng = np.random.default_rng(seed)
    X = grid.random_tangent(rng, degree)
    Y = grid.random_tangent(rng, degree)
    Z = grid.random_tangent(rng, degree)
    V = grid.random_ambient(rng, degree)
    eta = grid.random_scalar(rng, degree)
    xi = grid.random_scalar(rng, degree)
    n, H = grid.normal, grid.H
    reports = []

    def add(name, residual):
        rep = _report(grid, name, residual, seed)
        logger.debug(f"{name}: max {rep.residual_max:.3e} l2 {rep.residual_l2:.3e}")
        reports.append(rep)

    normal_part = grid.normal_component(sc.directional_derivative(grid, X, Y))
    wxy = np.sum(sc._weingarten_apply(grid, X) * Y, axis=-1)
    add("gauss", normal_part - wxy)

    add("div_p", sc.matrix_divergence(grid, grid.P) - H[:, None] * n)

    grad_eta = sc.tangential_gradient(grid, eta)
    hess = sc.tangential_gradient_matrix(grid, grad_eta)
    w_grad = grid.apply(grid.weingarten, grad_eta)
    exchange = np.einsum("ni,nj->nij", w_grad, n)
    add("td_exchange", (hess - np.swapaxes(hess, 1, 2)) - (exchange - np.swapaxes(exchange, 1, 2)))

    lhs = np.sum(sc.curvature_tensor(grid, X, Y, Z) * V, axis=-1)
    Vt = grid.tangential(V)
    rhs = np.sum(sc.curvature_tensor(grid, Z, Vt, X) * Y, axis=-1)
    add("cur_ten", lhs - rhs)

    add("ric_cur", sc.ricci(grid, X) - grid.K[:, None] * X)

    hodge = sc.hodge_laplacian(grid, X)
    hodge_intr = sc.hodge_laplacian_intrinsic(grid, X)
    add("hlap", hodge - hodge_intr)

    boch = sc.bochner_laplacian(grid, X)
    boch_intr = sc.bochner_laplacian_intrinsic(grid, X)
    add("blap", boch - boch_intr)

    add("weitzen", boch_intr - hodge_intr - grid.K[:, None] * X)

    div_x = sc.surface_divergence(grid, X)
    disr = 2.0 * sc.viscous_term(grid, np.ones(grid.size), X)
    add("disr_bl", disr - (boch + sc.tangential_gradient(grid, div_x) + sc.ricci(grid, X)))

    if grid.backend == "sphere":
        add("vec_sph", sc.sphere_delta2(grid, X) - hodge)

    add("duality", grid.inner(div_x, eta) + grid.inner(X, grad_eta))

    grad_xi = sc.tangential_gradient(grid, xi)
    ibp = [
        grid.integrate(eta * grad_xi[:, i] + xi * grad_eta[:, i] + eta * xi * H * n[:, i])
        for i in range(3)
    ]
    add("ibp_td", np.max(np.abs(ibp)))

    trace = np.einsum("nii->n", sc.tangential_gradient_matrix(grid, V))
    add("div_trace", sc.surface_divergence(grid, V) - trace)

    logger.info(
        f"identity suite on {grid.backend} {resolution_label(grid)}: "
        f"worst residual {max(r.residual_max for r in reports):.3e}"
    )
    return reports


def write_identity_csv(reports, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rep in reports:
            row = asdict(rep)
            row["residual_max"] = f"{rep.residual_max:.6e}"
            row["residual_l2"] = f"{rep.residual_l2:.6e}"
            writer.writerow(row)
    return path
