"""Discrete closed surfaces: a spectral sphere grid and a periodic torus grid.

Sign convention: n is the outward unit normal and W = -grad_Gamma n, so the
unit sphere has H = tr W = -2 and K = 1.
"""

import json

import numpy as np

from core.errors import ConfigurationError, UsageError
from core.fields import as_values
from core.spectral import SphereTransform, fd4_derivative, fourier_derivative, real_harmonic_values
from utils.logging_util import setup_logger

logger = setup_logger("geometry")

TORUS_DIFFERENTIATION = ("spectral", "fd4")


class SurfaceGrid:
    """Common node data and quadrature for a discretised closed surface.

    Subclasses fill in ``points``, ``normal``, ``weights``, ``weingarten`` and
    provide the differentiation primitives ``gradient``,
    ``divergence_tangential``, ``laplacian``, ``project``, ``dealias`` and
    ``evaluate``.
    """

    backend = None

    def _finish(self):
        n = self.normal
        self.size = self.points.shape[0]
        self.Q = np.einsum("ni,nj->nij", n, n)
        self.P = np.eye(3)[None, :, :] - self.Q
        W = self.weingarten
        self.H = np.einsum("nii->n", W)
        self.K = 0.5 * (self.H ** 2 - np.einsum("nij,nji->n", W, W))
        self.area = float(np.sum(self.weights))

    # pointwise algebra

    def tangential(self, v):
        v = np.asarray(v, dtype=float)
        return v - np.sum(v * self.normal, axis=-1)[..., None] * self.normal

    def normal_component(self, v):
        return np.sum(np.asarray(v) * self.normal, axis=-1)

    @staticmethod
    def apply(matrix, v):
        return np.einsum("...nij,...nj->...ni", matrix, v)

    # quadrature

    def integrate(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.size:
            raise UsageError(f"field has {f.shape[-1]} nodes, grid has {self.size}")
        return np.tensordot(f, self.weights, axes=([-1], [0]))

    def inner(self, u, v):
        """L2 inner product for scalar, vector or matrix fields (node axis first)."""
        prod = np.asarray(u, dtype=float) * np.asarray(v, dtype=float)
        prod = prod.reshape(prod.shape[0], -1).sum(axis=1)
        return float(self.integrate(prod))

    def norm(self, u):
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def mean(self, f):
        return self.integrate(f) / self.area

    # differentiation helpers shared by the backends

    def gradient_matrix(self, v):
        """(grad v)_ij = D_i v_j for v of shape (..., n, 3)."""
        comps = np.moveaxis(np.asarray(v, dtype=float), -1, -2)
        grads = self.gradient(comps)
        return np.moveaxis(grads, -3, -1)

    def describe(self):
        return json.dumps(self.descriptor(), sort_keys=True)

    def random_ambient(self, rng, degree=10, scale=1.0):
        return scale * np.stack([self.random_scalar(rng, degree) for _ in range(3)], axis=-1)

    def random_tangent(self, rng, degree=10, scale=1.0):
        return self.tangential(self.random_ambient(rng, degree, scale))


class SphereGrid(SurfaceGrid):
    backend = "sphere"

    def __init__(self, radius, bandlimit):
        self.radius = float(radius)
        self.bandlimit = int(bandlimit)
        self.transform = tr = SphereTransform(self.bandlimit)
        theta = np.repeat(tr.theta, tr.n_phi)
        phi = np.tile(tr.phi, tr.n_theta)
        self.theta, self.phi = theta, phi
        st, ct = np.sin(theta), np.cos(theta)
        sp, cp = np.sin(phi), np.cos(phi)
        self.normal = np.stack([st * cp, st * sp, ct], axis=-1)
        self.points = self.radius * self.normal
        self.e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
        self.e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
        self.weights = self.radius ** 2 * np.repeat(tr.gauss_weights, tr.n_phi) * (2.0 * np.pi / tr.n_phi)
        P = np.eye(3)[None] - np.einsum("ni,nj->nij", self.normal, self.normal)
        self.weingarten = -P / self.radius
        self.weingarten_asymmetry = 0.0
        self.h = np.pi * self.radius / self.bandlimit
        self._finish()

    def descriptor(self):
        return {"backend": self.backend, "radius": self.radius, "bandlimit": self.bandlimit,
                "n_theta": self.transform.n_theta, "n_phi": self.transform.n_phi, "nodes": self.size}

    def coefficients(self, f):
        return self.transform.analysis(f)

    def synthesize(self, coeffs):
        return self.transform.synthesis(coeffs)

    def gradient(self, f):
        return self.gradient_from_coefficients(self.transform.analysis(f))

    def gradient_from_coefficients(self, c):
        f_theta, f_phi = self.transform.gradient_components(c)
        g = f_theta[..., None] * self.e_theta + f_phi[..., None] * self.e_phi
        return g / self.radius

    def divergence_tangential(self, u):
        u = np.asarray(u, dtype=float)
        u_theta = np.sum(u * self.e_theta, axis=-1)
        u_phi = np.sum(u * self.e_phi, axis=-1)
        c = self.transform.divergence_coefficients(u_theta, u_phi) / self.radius
        return self.transform.synthesis(c)

    def laplacian(self, f):
        tr = self.transform
        c = tr.analysis(f)
        lam = -tr.degree * (tr.degree + 1.0) / self.radius ** 2
        return tr.synthesis(c * lam)

    def project(self, f):
        return self.transform.synthesis(self.transform.analysis(f))

    def dealias(self, f, fraction=2.0 / 3.0):
        tr = self.transform
        lmax = int(np.floor(fraction * self.bandlimit))
        return tr.synthesis(tr.truncate(tr.analysis(f), lmax))

    def angles_of(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rho = np.linalg.norm(points, axis=-1)
        theta = np.arccos(np.clip(points[:, 2] / rho, -1.0, 1.0))
        phi = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)
        return theta, phi

    def evaluate(self, f, points):
        """Interpolate nodal values at the closest surface points of ``points``."""
        theta, phi = self.angles_of(points)
        return self.transform.evaluate(self.transform.analysis(f), theta, phi)

    def harmonic(self, l, m):
        if l > self.bandlimit or abs(m) > l:
            raise ConfigurationError(f"harmonic Y({l},{m}) not representable at bandlimit {self.bandlimit}")
        return real_harmonic_values(l, m, self.theta, self.phi)

    def random_scalar(self, rng, degree=10):
        tr = self.transform
        L = tr.L
        c = rng.standard_normal((L + 1, L + 1)) + 1j * rng.standard_normal((L + 1, L + 1))
        c[0].imag = 0.0
        keep = tr.mask * (tr.l[None, :] <= degree)
        return tr.synthesis(c * keep) / np.sqrt(degree + 1.0)


class TorusGrid(SurfaceGrid):
    backend = "torus"

    def __init__(self, R, r, n_theta, n_phi, differentiation="spectral"):
        self.R, self.r = float(R), float(r)
        self.n_theta, self.n_phi = int(n_theta), int(n_phi)
        self.differentiation = differentiation
        th = 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta
        ph = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        self.theta, self.phi = TH.ravel(), PH.ravel()
        rho = self.R + self.r * np.cos(TH)
        mu = np.stack([rho * np.cos(PH), rho * np.sin(PH), self.r * np.sin(TH)])
        self.points = mu.reshape(3, -1).T.copy()

        mu_t = self._d(mu, 0).reshape(3, -1).T
        mu_p = self._d(mu, 1).reshape(3, -1).T
        self.tangents = np.stack([mu_t, mu_p], axis=1)
        metric = np.einsum("nai,nbi->nab", self.tangents, self.tangents)
        self.sqrt_det = np.sqrt(np.linalg.det(metric))
        self.metric = metric
        self.metric_inv = np.linalg.inv(metric)
        cross = np.cross(mu_p, mu_t)
        self.normal = cross / np.linalg.norm(cross, axis=-1)[:, None]
        hth, hph = 2.0 * np.pi / self.n_theta, 2.0 * np.pi / self.n_phi
        self.weights = self.sqrt_det * hth * hph
        self.h = min(self.r * hth, (self.R - self.r) * hph)
        self.size = self.points.shape[0]

        raw = -self.gradient_matrix(self.normal)
        self.weingarten_asymmetry = float(np.max(np.abs(raw - np.swapaxes(raw, -1, -2))))
        self.weingarten = 0.5 * (raw + np.swapaxes(raw, -1, -2))
        self._finish()
        logger.debug(
            f"torus grid R={self.R} r={self.r} {self.n_theta}x{self.n_phi} ({differentiation}), "
            f"W asymmetry {self.weingarten_asymmetry:.2e}"
        )

    def descriptor(self):
        return {"backend": self.backend, "R": self.R, "r": self.r, "n_theta": self.n_theta,
                "n_phi": self.n_phi, "differentiation": self.differentiation, "nodes": self.size}

    def _d(self, values, axis):
        """Parameter derivative of values shaped (..., n_theta, n_phi) along theta (0) or phi (1)."""
        ax = values.ndim - 2 + axis
        if self.differentiation == "fd4":
            return fd4_derivative(values, ax)
        return fourier_derivative(values, ax)

    def _param(self, f):
        f = np.asarray(f, dtype=float)
        return f.reshape(f.shape[:-1] + (self.n_theta, self.n_phi))

    def gradient(self, f):
        F = self._param(f)
        d = np.stack([self._d(F, 0), self._d(F, 1)], axis=-1)
        d = d.reshape(d.shape[:-3] + (self.size, 2))
        contra = np.einsum("nab,...nb->...na", self.metric_inv, d)
        return np.einsum("...na,nai->...ni", contra, self.tangents)

    def divergence_tangential(self, u):
        u = np.asarray(u, dtype=float)
        cov = np.einsum("...ni,nai->...na", u, self.tangents)
        contra = np.einsum("nab,...nb->...na", self.metric_inv, cov) * self.sqrt_det[:, None]
        flux = self._param(np.moveaxis(contra, -1, -2))
        div = self._d(flux[..., 0, :, :], 0) + self._d(flux[..., 1, :, :], 1)
        return div.reshape(div.shape[:-2] + (self.size,)) / self.sqrt_det

    def laplacian(self, f):
        g = self.gradient(f)
        return np.einsum("...nii->...n", self.gradient_matrix(g))

    def _fourier_filter(self, f, keep_theta, keep_phi):
        F = np.fft.fft2(self._param(f), axes=(-2, -1))
        kt = np.abs(np.fft.fftfreq(self.n_theta, d=1.0 / self.n_theta))
        kp = np.abs(np.fft.fftfreq(self.n_phi, d=1.0 / self.n_phi))
        mask = (kt[:, None] <= keep_theta) & (kp[None, :] <= keep_phi)
        out = np.real(np.fft.ifft2(F * mask, axes=(-2, -1)))
        return out.reshape(out.shape[:-2] + (self.size,))

    def project(self, f):
        return self._fourier_filter(f, self.n_theta // 2 - 1, self.n_phi // 2 - 1)

    def dealias(self, f, fraction=2.0 / 3.0):
        return self._fourier_filter(
            f, int(np.floor(fraction * (self.n_theta // 2))), int(np.floor(fraction * (self.n_phi // 2)))
        )

    def angles_of(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        phi = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)
        rho = np.hypot(points[:, 0], points[:, 1])
        theta = np.mod(np.arctan2(points[:, 2], rho - self.R), 2.0 * np.pi)
        return theta, phi

    def evaluate(self, f, points):
        """Trigonometric interpolation at the closest surface points (Nyquist dropped)."""
        theta, phi = self.angles_of(points)
        F = np.fft.fft2(self._param(f), axes=(-2, -1)) / self.size
        kt = np.fft.fftfreq(self.n_theta, d=1.0 / self.n_theta)
        kp = np.fft.fftfreq(self.n_phi, d=1.0 / self.n_phi)
        kt[self.n_theta // 2] = 0.0
        kp[self.n_phi // 2] = 0.0
        F[..., self.n_theta // 2, :] = 0.0
        F[..., :, self.n_phi // 2] = 0.0
        e_t = np.exp(1j * np.outer(theta, kt))
        e_p = np.exp(1j * np.outer(phi, kp))
        partial = np.einsum("pa,...ab->...pb", e_t, F)
        return np.real(np.einsum("...pb,pb->...p", partial, e_p))

    def fourier_mode(self, k_theta, k_phi, phase="cos"):
        arg = k_theta * self.theta + k_phi * self.phi
        return np.cos(arg) if phase == "cos" else np.sin(arg)

    def random_scalar(self, rng, degree=4):
        f = np.zeros(self.size)
        for kt in range(-degree, degree + 1):
            for kp in range(0, degree + 1):
                a, b = rng.standard_normal(2)
                f += a * self.fourier_mode(kt, kp, "cos") + b * self.fourier_mode(kt, kp, "sin")
        return f / (2.0 * degree + 1.0)

    def harmonic_fields(self):
        """The two harmonic tangent fields mu_phi / rho^2 and mu_theta / (r rho), each the rotation of the other."""
        t = self.tangents
        return t[:, 1] / self.metric[:, 1, 1][:, None], t[:, 0] / self.sqrt_det[:, None]


def build_sphere_grid(radius=1.0, bandlimit=32):
    """Spectral sphere grid with analytic geometry.

    Args:
        radius: Sphere radius a > 0.
        bandlimit: Maximum harmonic degree L >= 8.

    Returns:
        SphereGrid with (L+1) x (2L+2) nodes.
    """
    errors = []
    if not np.isfinite(radius) or radius <= 0:
        errors.append(f"sphere radius must be positive (got {radius})")
    if int(bandlimit) != bandlimit or bandlimit < 8:
        errors.append(f"bandlimit must be an integer >= 8 (got {bandlimit})")
    if errors:
        raise ConfigurationError(errors)
    return SphereGrid(radius, int(bandlimit))


def build_torus_grid(R=2.0, r=1.0, n_theta=64, n_phi=64, differentiation="spectral"):
    """Doubly periodic torus grid; geometry from differentiating the embedding."""
    errors = []
    if not (R > 0 and r > 0):
        errors.append(f"torus radii must be positive (got R={R}, r={r})")
    elif r >= R:
        errors.append(f"torus requires r < R to avoid self-intersection (got R={R}, r={r})")
    for name, n in (("n_theta", n_theta), ("n_phi", n_phi)):
        if int(n) != n or n < 32 or n % 2:
            errors.append(f"{name} must be an even integer >= 32 (got {n})")
    if differentiation not in TORUS_DIFFERENTIATION:
        errors.append(f"differentiation must be one of {TORUS_DIFFERENTIATION} (got {differentiation})")
    if errors:
        raise ConfigurationError(errors)
    return TorusGrid(R, r, int(n_theta), int(n_phi), differentiation)


def integrate(grid, f):
    """Quadrature approximation of the surface integral of a scalar field."""
    return float(grid.integrate(as_values(grid, f, "scalar")))
