"""Turn a RunConfig into identity tables, solver runs and sweep tables on disk."""

import os

import numpy as np

from core import surfcalc as sc
from core.config import with_overrides
from core.errors import SurfNSError
from core.expressions import evaluate, parse_expression
from core.galerkin import galerkin_basis, galerkin_run
from core.geometry import build_sphere_grid, build_torus_grid
from core.helmholtz import project_general, project_weighted
from core.identity_suite import run_identity_suite, write_identity_csv
from core.nssolver import NSConfig, energy_report, imex_run, manufactured_force, stationary_residuals
from core.run_storage import ensure_dir, run_id, save_csv, save_json
from core.thinfilm import (build_thin_domain, constant_extension_laplacian_residual, jacobian_bounds,
                           psi_bound, run_sweep, write_rate_table)
from utils.logging_util import setup_logger

logger = setup_logger("runner")

HELMHOLTZ_COLUMNS = ["sample", "kind", "weight", "div_defect", "orthogonality_defect", "idempotence_defect",
                     "potential_error", "iterations"]
HELMHOLTZ_DEFECTS = ("div_defect", "orthogonality_defect", "idempotence_defect", "potential_error")
# weights every helmholtz run checks besides the configured g
HELMHOLTZ_WEIGHTS = {
    "sphere": ("1", "1 + 0.3*Y(2,0)"),
    "torus": ("1", "1 + 0.3*fourier(1,0)"),
}


def canonical_text(cfg):
    """Config text without the output directory, so the run id names the computation only."""
    return "".join(line + "\n" for line in cfg.to_text().splitlines() if not line.startswith("out="))


def build_grid(cfg, refine=1):
    if cfg.surface == "sphere":
        return build_sphere_grid(cfg.radius, cfg.bandlimit * refine)
    return build_torus_grid(cfg.R, cfg.r, cfg.n_theta * refine, cfg.n_phi * refine, cfg.differentiation)


def _ns_config(cfg, grid):
    g = evaluate(grid, cfg.g_expr, "scalar")
    v0 = evaluate(grid, cfg.v0_expr, "vector")
    force_expr = parse_expression(cfg.f_expr)
    ns = NSConfig(grid, v0, nu=cfg.nu, gamma0=cfg.gamma0, gamma1=cfg.gamma1, g=g, dt=cfg.dt, T=cfg.T,
                  dealias=cfg.dealias, nonlinear=cfg.nonlinear,
                  variant="galerkin" if cfg.command == "galerkin" else cfg.variant,
                  k=cfg.k, snapshot_every=cfg.snapshot_every)
    force = evaluate(grid, force_expr.without_balance(), "vector")
    if force_expr.has_balance:
        force = force + manufactured_force(grid, ns.v0, ns.g, ns.nu, ns.gamma, ns.nonlinear, ns.dealias)
    ns.force = force if np.any(force) else None
    return ns


def run_verify(cfg, out_dir, rid):
    grid = build_grid(cfg)
    reports = run_identity_suite(grid, seed=cfg.seed)
    summary = {
        "grid": grid.descriptor(),
        "worst_residual": max(r.residual_max for r in reports),
        "area": grid.area,
        "mean_curvature": [float(np.min(grid.H)), float(np.max(grid.H))],
        "gauss_curvature": [float(np.min(grid.K)), float(np.max(grid.K))],
        "willmore_integral": float(grid.integrate(grid.H ** 2)),
        "weingarten_asymmetry": grid.weingarten_asymmetry,
    }
    if grid.backend == "torus":
        fine = run_identity_suite(build_grid(cfg, refine=2), seed=cfg.seed)
        summary["refinement_ratios"] = {
            c.identity: (c.residual_max / f.residual_max if f.residual_max > 0 else float("inf"))
            for c, f in zip(reports, fine)
        }
        reports = reports + fine
    path = write_identity_csv(reports, os.path.join(out_dir, f"verify_{rid}.csv"))
    save_json(summary, out_dir, f"verify_{rid}.json")
    return [path]


def helmholtz_weights(cfg):
    """Weight expressions of the Helmholtz check: the configured g first, then the backend defaults."""
    weights = [cfg.g_expr]
    for expr in HELMHOLTZ_WEIGHTS[cfg.surface]:
        if expr.replace(" ", "") not in {w.replace(" ", "") for w in weights}:
            weights.append(expr)
    return weights


def run_helmholtz(cfg, out_dir, rid):
    grid = build_grid(cfg)
    weights = [(expr, evaluate(grid, expr, "scalar")) for expr in helmholtz_weights(cfg)]
    rng = np.random.default_rng(cfg.seed)
    degree = 10 if grid.backend == "sphere" else 4
    rows = []
    for i in range(cfg.samples):
        v = grid.random_tangent(rng, degree)
        scale = max(grid.norm(v), np.finfo(float).tiny)
        for expr, g in weights:
            dec = project_weighted(grid, v, g)
            again = project_weighted(grid, dec.solenoidal, g).solenoidal
            rows.append({"sample": i, "kind": dec.kind, "weight": expr, "div_defect": dec.div_defect,
                         "orthogonality_defect": dec.orthogonality_defect,
                         "idempotence_defect": grid.norm(again - dec.solenoidal) / scale,
                         "potential_error": 0.0, "iterations": dec.iterations})

        p = grid.random_scalar(rng, degree)
        p = p - grid.mean(p)
        manufactured = sc.tangential_gradient(grid, p) + (p * grid.H)[:, None] * grid.normal
        general = project_general(grid, manufactured)
        err = float(np.max(np.abs(general.potential - p))) / max(float(np.max(np.abs(p))), np.finfo(float).tiny)
        rows.append({"sample": i, "kind": general.kind, "weight": "", "div_defect": general.div_defect,
                     "orthogonality_defect": general.orthogonality_defect,
                     "idempotence_defect": grid.norm(general.solenoidal) / grid.norm(manufactured),
                     "potential_error": err, "iterations": general.iterations})

    def worst(selected):
        return {column: max(float(row[column]) for row in selected) for column in HELMHOLTZ_DEFECTS}

    summary = worst(rows)
    summary["weights"] = {expr: worst([row for row in rows if row["weight"] == expr]) for expr, _ in weights}
    summary["general"] = worst([row for row in rows if row["kind"] == "general"])
    summary["samples"] = cfg.samples
    summary["grid"] = grid.descriptor()
    path = save_csv(rows, HELMHOLTZ_COLUMNS, out_dir, f"helmholtz_{rid}.csv")
    save_json(summary, out_dir, f"helmholtz_{rid}.json")
    return [path]


def run_solve(cfg, out_dir, rid):
    grid = build_grid(cfg)
    ns = _ns_config(cfg, grid)
    dump_dir = ensure_dir(os.path.join(out_dir, f"fields_{rid}")) if cfg.dump_fields else None
    if ns.variant == "galerkin":
        traj = galerkin_run(ns)
    else:
        traj = imex_run(ns, dump_dir=dump_dir)
    name = "galerkin" if cfg.command == "galerkin" else "solve"
    path = traj.write_csv(os.path.join(out_dir, f"{name}_{rid}.csv"))

    v0, vT = traj.velocities[0], traj.final
    norm0 = grid.norm(v0)
    summary = {
        "grid": grid.descriptor(),
        "variant": ns.variant,
        "steps": ns.steps,
        "v0_projection_defect": ns.v0_defect,
        "relative_change": grid.norm(vT - v0) / norm0 if norm0 > 0 else 0.0,
        "final_energy": traj.rows[-1]["energy"],
        "max_energy_defect": max(row["energy_defect"] for row in traj.rows),
        "max_div_defect": max(row["div_defect"] for row in traj.rows),
    }
    if ns.T > 0 and norm0 > 0 and grid.norm(vT) > 0:
        summary["decay_rate"] = float(-np.log(grid.norm(vT) / norm0) / traj.times[-1])
    if traj.pressures[-1] is not None:
        q = traj.pressures[-1]
        bernoulli = 0.5 * np.sum(vT ** 2, axis=-1)
        summary["bernoulli_deviation"] = float(np.max(np.abs(q - (bernoulli - grid.mean(bernoulli)))))
        if ns.weight_is_constant and ns.force is None and ns.gamma == 0:
            limit, hodge_variant = stationary_residuals(grid, vT, q, ns.nu)
            summary["stationary_residual"] = limit
            summary["stationary_residual_hodge_variant"] = hodge_variant
    if ns.variant == "galerkin":
        basis = traj.extra["basis"]
        summary["energy_bound_constant"] = traj.extra["energy_bound_constant"]
        summary["gram_defect"] = basis.gram_defect
        summary["eigenvalues"] = [float(x) for x in basis.eigenvalues]
    else:
        interval = energy_report(traj, ns)
        if interval:
            summary["max_interval_energy_defect"] = max(row["defect"] for row in interval)
    save_json(summary, out_dir, f"{name}_{rid}.json")
    return [path]


def run_galerkin(cfg, out_dir, rid):
    if cfg.T == 0:
        grid = build_grid(cfg)
        ns = _ns_config(cfg, grid)
        basis = galerkin_basis(grid, ns.g, ns.nu, ns.gamma0, ns.gamma1, ns.k)
        rows = [{"index": i, "eigenvalue": float(lam)} for i, lam in enumerate(basis.eigenvalues)]
        path = save_csv(rows, ["index", "eigenvalue"], out_dir, f"galerkin_{rid}.csv")
        save_json({"k": basis.k, "gram_defect": basis.gram_defect}, out_dir, f"galerkin_{rid}.json")
        return [path]
    return run_solve(cfg, out_dir, rid)


def run_thinfilm(cfg, out_dir, rid):
    grid = build_grid(cfg)
    g0 = evaluate(grid, cfg.g0_expr, "scalar")
    g1 = evaluate(grid, cfg.g1_expr, "scalar")
    base = build_thin_domain(grid, g0, g1, max(cfg.eps_values), cfg.n_radial)
    result = run_sweep(base, eps_values=tuple(sorted(cfg.eps_values, reverse=True)), seed=cfg.seed)
    path = write_rate_table(result.rows, out_dir, f"thinfilm_{rid}.csv")
    eta = grid.random_scalar(np.random.default_rng(cfg.seed), 4)
    summary = {
        "grid": grid.descriptor(),
        "slopes": result.slopes,
        "r2": result.r2,
        "ave_der_max": result.ave_der_max,
        "impermeability_max": result.impermeability_max,
        "jacobian": jacobian_bounds(base),
        "psi": psi_bound(base),
        "lap_rest": constant_extension_laplacian_residual(grid, eta).residual_max,
    }
    save_json(summary, out_dir, f"thinfilm_{rid}.json")
    return [path]


COMMANDS = {
    "verify": run_verify,
    "helmholtz": run_helmholtz,
    "solve": run_solve,
    "galerkin": run_galerkin,
    "thinfilm": run_thinfilm,
}


def run(cfg, out=None, seed=None):
    """Execute a validated RunConfig.

    Args:
        cfg: RunConfig.
        out: Output directory override.
        seed: Seed override.

    Returns:
        Process exit status: 0 on success, otherwise the exit code of the
        raised error (1 configuration, 2 solver, 3 consistency).
    """
    try:
        cfg = with_overrides(cfg, out=out, seed=seed)
        out_dir = ensure_dir(cfg.out)
        rid = run_id(canonical_text(cfg))
        logger.info(f"{cfg.command} run {rid} -> {out_dir}")
        paths = COMMANDS[cfg.command](cfg, out_dir, rid)
        for path in paths:
            logger.info(f"wrote {path}")
        return 0
    except SurfNSError as e:
        logger.error(f"{cfg.command} failed: {e}")
        return e.exit_code
