"""Real spherical harmonics, quadrature on the sphere, and projection.

Convention: orthonormal real harmonics built from the complex ones with the
Condon-Shortley phase, which cancels in the real combination::

    Y_l^m  = sqrt(2) N_lm P_l^m(cos t) cos(m p)      m > 0
    Y_l^0  =         N_l0 P_l^0(cos t)
    Y_l^-m = sqrt(2) N_lm P_l^m(cos t) sin(m p)      m > 0

with ``P_l^m`` carrying no ``(-1)^m`` factor.  So ``Y_1^{-1}, Y_1^0, Y_1^1``
are proportional to ``y, z, x`` and every stretched state ``Y_l^l`` is a
positive multiple of ``Re (x + i y)^l``.

Coefficients are stored flat with ``index(l, m) = l*l + l + m``.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import factorial, pi, sqrt

import numpy as np

from ._validation import check_degree, check_directions, check_lm

L_MAX_SUPPORTED = 12
CONVENTION_ID = "real-cs-v1"


def sh_index(l, m):
    return l * l + l + m


def n_coeffs(L):
    return (L + 1) ** 2


def degree_of_index(L):
    """Degree ``l`` for every flat index up to ``L``."""
    return np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)


@dataclass(frozen=True)
class SHVector:
    """Real SH coefficient block for degrees ``0..L``."""

    L: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size != n_coeffs(self.L):
            raise ValueError(f"SHVector of degree {self.L} needs {n_coeffs(self.L)} coeffs, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("SHVector coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, L):
        return cls(L, np.zeros(n_coeffs(L)))

    @classmethod
    def unit(cls, l, m, L=None):
        L = l if L is None else L
        c = np.zeros(n_coeffs(L))
        c[sh_index(l, m)] = 1.0
        return cls(L, c)

    def __getitem__(self, lm):
        l, m = lm
        return float(self.coeffs[sh_index(l, m)])

    def block(self, l):
        return self.coeffs[l * l:(l + 1) ** 2]

    def degree_power(self):
        """Per-degree power ``sum_m c_lm^2`` for ``l = 0..L``."""
        return np.bincount(degree_of_index(self.L), weights=self.coeffs**2, minlength=self.L + 1)

    def truncate(self, L):
        if L > self.L:
            return SHVector(L, np.concatenate([self.coeffs, np.zeros(n_coeffs(L) - self.coeffs.size)]))
        return SHVector(L, self.coeffs[:n_coeffs(L)])


@lru_cache(maxsize=None)
def _norm(l, m):
    return sqrt((2 * l + 1) / (4 * pi) * factorial(l - m) / factorial(l + m))


def _double_factorial(n):
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


def solid_harmonics(L, v, grad=False):
    """Regular real solid harmonics ``r^l Y_l^m(v / r)`` as polynomials of ``v``.

    ``v`` has shape ``(n, 3)`` and need not be normalized.  Returns an array of
    shape ``(n, (L+1)^2)``; with ``grad=True`` also the Cartesian gradients
    ``(n, (L+1)^2, 3)``.  The polynomial recurrences are carried in forward
    mode, so gradients are exact.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    r2 = x * x + y * y + z * z
    one = np.ones(n)
    zero3 = np.zeros((n, 3))
    ex = np.broadcast_to([1.0, 0.0, 0.0], (n, 3))
    ey = np.broadcast_to([0.0, 1.0, 0.0], (n, 3))
    ez = np.broadcast_to([0.0, 0.0, 1.0], (n, 3))
    dr2 = 2.0 * v

    # (x + i y)^m split into A_m + i B_m.
    A, B = [one], [np.zeros(n)]
    dA, dB = [zero3], [zero3]
    for m in range(1, L + 1):
        a, b = A[-1], B[-1]
        A.append(x * a - y * b)
        B.append(x * b + y * a)
        if grad:
            dA.append(a[:, None] * ex + x[:, None] * dA[-1] - b[:, None] * ey - y[:, None] * dB[-1])
            dB.append(b[:, None] * ex + x[:, None] * dB[-1] + a[:, None] * ey + y[:, None] * dA[-2])

    out = np.empty((n, n_coeffs(L)))
    dout = np.empty((n, n_coeffs(L), 3)) if grad else None
    for m in range(L + 1):
        # Pi_l^m(z, r^2) with r^l P_l^m(z/r) = rho^m Pi_l^m.
        p_prev, p_cur = None, _double_factorial(2 * m - 1) * one
        d_prev, d_cur = None, zero3
        for l in range(m, L + 1):
            if l == m + 1:
                p_new = (2 * m + 1) * z * p_cur
                d_new = (2 * m + 1) * (p_cur[:, None] * ez + z[:, None] * d_cur) if grad else None
                p_prev, p_cur, d_prev, d_cur = p_cur, p_new, d_cur, d_new
            elif l > m + 1:
                p_new = ((2 * l - 1) * z * p_cur - (l + m - 1) * r2 * p_prev) / (l - m)
                if grad:
                    d_new = ((2 * l - 1) * (p_cur[:, None] * ez + z[:, None] * d_cur)
                             - (l + m - 1) * (p_prev[:, None] * dr2 + r2[:, None] * d_prev)) / (l - m)
                else:
                    d_new = None
                p_prev, p_cur, d_prev, d_cur = p_cur, p_new, d_cur, d_new
            if m == 0:
                c = _norm(l, 0)
                out[:, sh_index(l, 0)] = c * p_cur
                if grad:
                    dout[:, sh_index(l, 0)] = c * d_cur
            else:
                c = sqrt(2.0) * _norm(l, m)
                out[:, sh_index(l, m)] = c * p_cur * A[m]
                out[:, sh_index(l, -m)] = c * p_cur * B[m]
                if grad:
                    dout[:, sh_index(l, m)] = c * (d_cur * A[m][:, None] + p_cur[:, None] * dA[m])
                    dout[:, sh_index(l, -m)] = c * (d_cur * B[m][:, None] + p_cur[:, None] * dB[m])
    if grad:
        return out, dout
    return out


def real_sph_harm(L, dirs):
    """Evaluate all ``Y_l^m`` with ``l <= L`` at unit ``dirs``; shape ``(n, (L+1)^2)``."""
    L = check_degree(L, L_MAX_SUPPORTED)
    dirs = check_directions(dirs)
    return solid_harmonics(L, dirs)


def sh_direction_grad(L, v):
    """Values and gradients of ``Y_l^m(v/|v|)`` with respect to unnormalized ``v``.

    Returns ``(Y, dY)`` of shapes ``(n, (L+1)^2)`` and ``(n, (L+1)^2, 3)``.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    r = np.linalg.norm(v, axis=1)
    S, dS = solid_harmonics(L, v, grad=True)
    ells = degree_of_index(L)
    rl = r[:, None] ** ells[None, :]
    Y = S / rl
    dY = dS / rl[:, :, None] - (ells[None, :, None] * Y[:, :, None]) * v[:, None, :] / (r**2)[:, None, None]
    return Y, dY


def eval_sh(l, m, direction):
    l, m = check_lm(l, m, L_MAX_SUPPORTED)
    d = check_directions(direction)
    if d.shape[0] != 1:
        raise ValueError("eval_sh takes a single direction")
    return float(solid_harmonics(l, d)[0, sh_index(l, m)])


def feature_vector(L, direction):
    """Degree-``L`` SH feature vector of one unit direction."""
    Y = real_sph_harm(L, direction)
    if Y.shape[0] != 1:
        raise ValueError("feature_vector takes a single direction")
    return SHVector(L, Y[0])


@dataclass(frozen=True)
class QuadratureGrid:
    """Gauss-Legendre in ``cos(theta)`` times uniform azimuth.

    Integrates any polynomial of degree ``<= exact_degree`` on the sphere
    exactly (up to rounding).
    """

    nodes: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __len__(self):
        return self.weights.size

    def integrate(self, samples):
        return float(np.dot(self.weights, samples))


def _build_grid_unchecked(resolution):
    n_theta = (resolution + 1) // 2
    mu, w_mu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * pi * np.arange(resolution) / resolution
    st = np.sqrt(1.0 - mu**2)
    nodes = np.stack(
        [np.outer(st, np.cos(phi)).ravel(), np.outer(st, np.sin(phi)).ravel(), np.repeat(mu, resolution)],
        axis=1,
    )
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    weights = np.repeat(w_mu, resolution) * (2 * pi / resolution)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureGrid(nodes, weights, min(2 * n_theta - 1, resolution - 1))


@lru_cache(maxsize=16)
def build_grid(resolution=2 * L_MAX_SUPPORTED + 2):
    """Product quadrature with ``resolution`` azimuthal points.

    ``resolution`` must be at least ``2*L_MAX_SUPPORTED + 2`` so that every
    product of two supported harmonics integrates exactly.
    """
    if resolution < 2 * L_MAX_SUPPORTED + 2:
        raise ValueError(f"resolution must be >= {2 * L_MAX_SUPPORTED + 2}, got {resolution}")
    return _build_grid_unchecked(int(resolution))


def grid_for_degree(degree):
    """Smallest admissible grid integrating polynomials of ``degree`` exactly."""
    return build_grid(max(2 * L_MAX_SUPPORTED + 2, degree + 1))


def project(samples, grid, L):
    """Quadrature projection ``c_lm = sum_k w_k f(n_k) Y_lm(n_k)``."""
    L = check_degree(L, L_MAX_SUPPORTED)
    f = np.asarray(samples, dtype=float).reshape(-1)
    if f.size != len(grid):
        raise ValueError(f"got {f.size} samples for a grid of {len(grid)} nodes")
    Y = solid_harmonics(L, grid.nodes)
    return SHVector(L, Y.T @ (grid.weights * f))


def synthesize(coeffs, dirs):
    """Evaluate ``sum c_lm Y_lm`` at ``dirs``."""
    dirs = check_directions(dirs)
    return solid_harmonics(coeffs.L, dirs) @ coeffs.coeffs
