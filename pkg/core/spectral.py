"""Spherical harmonic and periodic Fourier transforms.

Real orthonormal harmonics are used throughout:

    Y_lm = norm_m * Pbar_lm(cos theta) * cos(m phi)     (cosine family)
    Y_l,-m = norm_m * Pbar_lm(cos theta) * sin(m phi)   (sine family)

with norm_0 = 1, norm_m = sqrt(2), and Pbar normalised so that
int_{-1}^{1} Pbar_lm^2 dx = 1 / (2 pi).  Coefficients are stored as one complex
array c[..., m, l] = A_lm - i B_lm, zero for l < m.
"""

from functools import cached_property

import numpy as np


def legendre_table(lmax, x):
    """Normalised associated Legendre functions and their theta-derivatives.

    Args:
        lmax: Maximum degree.
        x: cos(theta) values, strictly inside (-1, 1).

    Returns:
        (p, dp) each of shape (lmax+1, lmax+1, len(x)) indexed [m, l, node].
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(1.0 - x * x)
    p = np.zeros((lmax + 1, lmax + 1, x.size))
    dp = np.zeros_like(p)

    pmm = np.full(x.size, 1.0 / np.sqrt(4.0 * np.pi))
    for m in range(lmax + 1):
        if m > 0:
            pmm = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        p[m, m] = pmm
        if m + 1 <= lmax:
            p[m, m + 1] = np.sqrt(2.0 * m + 3.0) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[m, l] = a * (x * p[m, l - 1] - b * p[m, l - 2])

    for m in range(lmax + 1):
        for l in range(m, lmax + 1):
            term = l * x * p[m, l]
            if l > m:
                term = term - np.sqrt((2.0 * l + 1.0) * (l * l - m * m) / (2.0 * l - 1.0)) * p[m, l - 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                dp[m, l] = term / s
    return p, dp


def harmonic_norms(lmax):
    norm = np.full(lmax + 1, np.sqrt(2.0))
    norm[0] = 1.0
    return norm


def real_harmonic_values(l, m, theta, phi):
    """Y_lm at colatitude/longitude points; m < 0 selects the sine family."""
    ma = abs(m)
    if ma > l:
        raise ValueError(f"|m| must not exceed l (got l={l}, m={m})")
    p, _ = legendre_table(l, np.cos(theta))
    norm = 1.0 if ma == 0 else np.sqrt(2.0)
    angular = np.cos(ma * phi) if m >= 0 else np.sin(ma * phi)
    return norm * p[ma, l] * angular


class SphereTransform:
    """Gauss-Legendre x uniform longitude transform for bandlimit L."""

    def __init__(self, bandlimit):
        self.L = bandlimit
        self.n_theta = bandlimit + 1
        self.n_phi = 2 * bandlimit + 2
        x, w = np.polynomial.legendre.leggauss(self.n_theta)
        # north to south
        self.x = x[::-1].copy()
        self.gauss_weights = w[::-1].copy()
        self.theta = np.arccos(self.x)
        self.sin_theta = np.sqrt(1.0 - self.x ** 2)
        self.phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        self.p, self.dp = legendre_table(bandlimit, self.x)
        self.norm = harmonic_norms(bandlimit)
        self.m = np.arange(bandlimit + 1)
        self.l = np.arange(bandlimit + 1)
        self.mask = (self.l[None, :] >= self.m[:, None]).astype(float)

    @cached_property
    def degree(self):
        """l for each coefficient slot [m, l]."""
        return np.broadcast_to(self.l[None, :], (self.L + 1, self.L + 1)).astype(float)

    @property
    def size(self):
        return self.n_theta * self.n_phi

    def _grid(self, values):
        values = np.asarray(values, dtype=float)
        return values.reshape(values.shape[:-1] + (self.n_theta, self.n_phi))

    def _fourier(self, values):
        f = np.fft.rfft(self._grid(values), axis=-1)
        return f[..., : self.L + 1]

    def _from_fourier(self, g):
        """Inverse of the longitude transform; g[..., j, m] for m = 0..L."""
        shape = g.shape[:-1] + (self.n_phi // 2 + 1,)
        c = np.zeros(shape, dtype=complex)
        c[..., 0] = self.n_phi * g[..., 0]
        c[..., 1 : self.L + 1] = 0.5 * self.n_phi * g[..., 1:]
        out = np.fft.irfft(c, n=self.n_phi, axis=-1)
        return out.reshape(out.shape[:-2] + (self.size,))

    def analysis(self, values):
        """Nodal values (..., n) -> coefficients (..., L+1, L+1)."""
        f = self._fourier(values)
        scale = 2.0 * np.pi / self.n_phi
        c = np.einsum("mlj,j,...jm->...ml", self.p, self.gauss_weights, f)
        return scale * self.norm[:, None] * c

    def synthesis(self, coeffs, table=None):
        table = self.p if table is None else table
        g = np.einsum("mlj,...ml->...jm", table, coeffs * self.mask)
        return self._from_fourier(g * self.norm)

    def synthesis_theta_derivative(self, coeffs):
        return self.synthesis(coeffs, table=self.dp)

    def phi_derivative(self, coeffs):
        return 1j * self.m[:, None] * coeffs

    def gradient_components(self, coeffs):
        """(d/dtheta, (1/sin theta) d/dphi) of the synthesised field on the unit sphere."""
        f_theta = self.synthesis_theta_derivative(coeffs)
        f_phi = self.synthesis(self.phi_derivative(coeffs))
        sin_nodes = np.repeat(self.sin_theta, self.n_phi)
        return f_theta, f_phi / sin_nodes

    def divergence_coefficients(self, u_theta, u_phi):
        """Coefficients of -grad^T applied to (u_theta, u_phi) on the unit sphere.

        This is the exact quadrature adjoint of ``gradient_components``.
        """
        ut = self._fourier(u_theta)
        up = self._fourier(u_phi)
        scale = 2.0 * np.pi / self.n_phi
        w = self.gauss_weights
        term = np.einsum("mlj,j,...jm->...ml", self.dp, w, ut)
        term = term - 1j * self.m[:, None] * np.einsum(
            "mlj,j,...jm->...ml", self.p, w / self.sin_theta, up
        )
        return -scale * self.norm[:, None] * term

    def truncate(self, coeffs, lmax):
        keep = (self.l[None, :] <= lmax).astype(float)
        return coeffs * keep

    def evaluate(self, coeffs, theta, phi, chunk=2048):
        """Synthesise at arbitrary colatitude/longitude points."""
        theta = np.asarray(theta, dtype=float).ravel()
        phi = np.asarray(phi, dtype=float).ravel()
        out = np.empty(coeffs.shape[:-2] + (theta.size,))
        for start in range(0, theta.size, chunk):
            sl = slice(start, start + chunk)
            p, _ = legendre_table(self.L, np.cos(theta[sl]))
            cm = np.exp(1j * np.outer(self.m, phi[sl]))
            g = np.einsum("mlp,...ml->...mp", p, coeffs * self.mask)
            out[..., sl] = np.real(np.einsum("...mp,mp->...p", g * self.norm[:, None], cm))
        return out


def fourier_derivative(values, axis, order=1):
    """Spectral derivative of samples periodic on [0, 2 pi) along axis.

    The Nyquist mode is dropped for odd orders so the operator stays skew.
    """
    n = values.shape[axis]
    k = np.fft.fftfreq(n, d=1.0 / n)
    if order % 2 == 1:
        k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    mult = ((1j * k) ** order).reshape(shape)
    return np.real(np.fft.ifft(np.fft.fft(values, axis=axis) * mult, axis=axis))


def fd4_derivative(values, axis):
    """Fourth order central difference on a periodic [0, 2 pi) grid."""
    n = values.shape[axis]
    h = 2.0 * np.pi / n

    def shift(s):
        return np.roll(values, -s, axis=axis)

    return (8.0 * (shift(1) - shift(-1)) - (shift(2) - shift(-2))) / (12.0 * h)
