"""Surface differential operators in the fixed R^3 frame.

Conventions: (grad_Gamma v)_ij = D_i v_j, div_Gamma v = sum_i D_i v_i and the
matrix divergence is [div A]_j = sum_i D_i A_ij.  Arrays are node-first:
scalars (n,), vectors (n, 3), matrices (n, 3, 3).
"""

import numpy as np

from core.errors import UsageError
from core.fields import as_values


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _mat(A, B):
    return np.einsum("...nij,...njk->...nik", A, B)


def tangential_gradient(grid, eta):
    """grad_Gamma eta; tangential by construction on both backends."""
    return grid.gradient(as_values(grid, eta, "scalar"))


def surface_divergence(grid, v):
    """div_Gamma v = div_Gamma(P v) - H (v . n) for an ambient field v."""
    v = as_values(grid, v, "vector")
    return grid.divergence_tangential(v) - grid.H * grid.normal_component(v)


def tangential_gradient_matrix(grid, v):
    return grid.gradient_matrix(as_values(grid, v, "vector"))


def matrix_divergence(grid, A):
    """Column-wise surface divergence [div A]_j = sum_i D_i A_ij."""
    A = as_values(grid, A, "matrix")
    cols = np.moveaxis(A, -1, 0)
    return np.stack([surface_divergence(grid, c) for c in cols], axis=-1)


def strain_rate(grid, v):
    """D_Gamma(v) = P (grad_Gamma v)_S P."""
    G = tangential_gradient_matrix(grid, v)
    return _mat(_mat(grid.P, _sym(G)), grid.P)


def covariant_derivative(grid, X, Y):
    """nabla-bar_Y X = P (grad_Gamma X)^T Y."""
    G = tangential_gradient_matrix(grid, X)
    Y = as_values(grid, Y, "vector")
    return grid.tangential(np.einsum("nij,ni->nj", G, Y))


def directional_derivative(grid, X, Y):
    """(Y . grad_Gamma) X, without projection."""
    G = tangential_gradient_matrix(grid, X)
    return np.einsum("nij,ni->nj", G, as_values(grid, Y, "vector"))


def laplace_beltrami(grid, f):
    """Laplace-Beltrami of a scalar field, or componentwise of a vector field."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 2 and f.shape == (grid.size, 3):
        return np.moveaxis(grid.laplacian(np.moveaxis(f, -1, 0)), 0, -1)
    return grid.laplacian(as_values(grid, f, "scalar"))


def _weingarten_apply(grid, X, power=1):
    out = np.asarray(X, dtype=float)
    for _ in range(power):
        out = grid.apply(grid.weingarten, out)
    return out


def hodge_laplacian(grid, X):
    """Delta_H X = P(Delta_Gamma X) + (2W^2 - HW) X."""
    X = as_values(grid, X, "vector")
    WX = _weingarten_apply(grid, X)
    W2X = _weingarten_apply(grid, WX)
    return grid.tangential(laplace_beltrami(grid, X)) + 2.0 * W2X - grid.H[:, None] * WX


def bochner_laplacian(grid, X):
    """Delta_B X = P(Delta_Gamma X) + W^2 X."""
    X = as_values(grid, X, "vector")
    return grid.tangential(laplace_beltrami(grid, X)) + _weingarten_apply(grid, X, 2)


def ricci(grid, X):
    """Ric(X) = (HW - W^2) X."""
    X = as_values(grid, X, "vector")
    WX = _weingarten_apply(grid, X)
    return grid.H[:, None] * WX - _weingarten_apply(grid, WX)


def surface_curl(grid, X):
    """Scalar curl div_Gamma(X x n) of a tangent field."""
    return surface_divergence(grid, np.cross(X, grid.normal))


def hodge_laplacian_intrinsic(grid, X):
    """grad div X - grad(curl X) x n, computed without curvature terms."""
    X = as_values(grid, X, "vector")
    grad_div = tangential_gradient(grid, surface_divergence(grid, X))
    rot = np.cross(tangential_gradient(grid, surface_curl(grid, X)), grid.normal)
    return grad_div - rot


def bochner_laplacian_intrinsic(grid, X):
    """P div_Gamma[P (grad_Gamma X) P]."""
    G = tangential_gradient_matrix(grid, X)
    return grid.tangential(matrix_divergence(grid, _mat(_mat(grid.P, G), grid.P)))


def curvature_tensor(grid, X, Y, Z):
    """R(X, Y)Z = (WZ . Y) WX - (WZ . X) WY, evaluated pointwise."""
    WZ = _weingarten_apply(grid, Z)
    a = np.sum(WZ * Y, axis=-1)[:, None]
    b = np.sum(WZ * X, axis=-1)[:, None]
    return a * _weingarten_apply(grid, X) - b * _weingarten_apply(grid, Y)


def sphere_delta2(grid, X):
    """Vector Laplacian written with spherical-coordinate components.

    Works with the smooth components u_theta = X . (sin theta e_theta) and
    u_phi = X . (sin theta e_phi) and returns the Cartesian field.
    """
    if grid.backend != "sphere":
        raise UsageError("sphere_delta2 requires the sphere backend")
    X = as_values(grid, X, "vector")
    a = grid.radius
    c, s = np.cos(grid.theta), np.sin(grid.theta)
    zeta = s[:, None] * grid.e_theta
    xi = s[:, None] * grid.e_phi
    u_t = np.sum(X * zeta, axis=-1)
    u_p = np.sum(X * xi, axis=-1)

    grads = tangential_gradient(grid, np.stack([u_t, u_p]))
    d_theta = a * np.sum(grads * grid.e_theta, axis=-1)
    d_phi = a * s * np.sum(grads * grid.e_phi, axis=-1)
    lap = laplace_beltrami(grid, np.stack([u_t, u_p]))
    k = 2.0 * c / (a ** 2 * s ** 2)

    comp_t = lap[0] / s - k * (d_theta[0] + d_phi[1] / s)
    comp_p = lap[1] / s - k * d_theta[1] + k * d_phi[0] / s
    return comp_t[:, None] * grid.e_theta + comp_p[:, None] * grid.e_phi


def viscous_term(grid, g, X):
    """P div_Gamma[g D_Gamma(X)]."""
    gv = as_values(grid, g, "scalar")
    D = strain_rate(grid, X)
    return grid.tangential(matrix_divergence(grid, gv[:, None, None] * D))


def killing_field(grid, axis):
    """a x y on a sphere (tangent, divergence free, zero strain)."""
    return np.cross(np.asarray(axis, dtype=float)[None, :], grid.points)


def vector_harmonic(grid, l, m, kind):
    """Toroidal n x grad Y_lm or poloidal grad Y_lm on the sphere, unit L2 norm."""
    if grid.backend != "sphere":
        raise UsageError("vector harmonics are defined on the sphere backend")
    grad = tangential_gradient(grid, grid.harmonic(l, m))
    field = np.cross(grid.normal, grad) if kind == "toroidal" else grad
    return field / grid.norm(field)


def vector_spanning_set(grid, degree):
    """Low-order tangent fields used to span discrete solenoidal spaces.

    Sphere: toroidal and poloidal harmonics with 1 <= l <= degree.
    Torus: gradients and rotated gradients of Fourier modes with
    |k| <= degree, plus the two harmonic fields.
    """
    fields = []
    if grid.backend == "sphere":
        for l in range(1, degree + 1):
            for m in range(-l, l + 1):
                for kind in ("toroidal", "poloidal"):
                    fields.append(vector_harmonic(grid, l, m, kind))
    else:
        fields.extend(grid.harmonic_fields())
        for kt in range(0, degree + 1):
            for kp in range(-degree, degree + 1):
                if kt == 0 and kp <= 0:
                    continue
                for phase in ("cos", "sin"):
                    grad = tangential_gradient(grid, grid.fourier_mode(kt, kp, phase))
                    fields.append(grad)
                    fields.append(np.cross(grid.normal, grad))
    return np.array(fields)


def korn_constant(grid, samples=100, seed=0x5EED, degree=6):
    """Empirical max of |grad v|^2 / (|D(v)|^2 + |v|^2) over random tangent fields."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        v = grid.random_tangent(rng, degree)
        G = tangential_gradient_matrix(grid, v)
        D = strain_rate(grid, v)
        ratio = grid.inner(G, G) / (grid.inner(D, D) + grid.inner(v, v))
        worst = max(worst, ratio)
    return worst
