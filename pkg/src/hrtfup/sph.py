"""Spherical harmonics and spherical Hankel functions.

The exterior-field basis used for interpolation is the spherical
wavefunction h_n^(1)(k r) * Y_n^m(theta, phi).  Spherical harmonics follow
the orthonormal (quantum/geodesy) convention with the Condon-Shortley
phase; interpolation results do not depend on the convention because the
same basis is used for fitting and synthesis.

Basis vectors are flattened over (n, m) as index n^2 + n + m, i.e. orders
grouped together with degrees m = -n..n in ascending order.

The associated Legendre functions are evaluated by forward recurrence on
the fully normalized functions, which is stable and overflow-free for the
orders needed here (n <= 19 in practice; safe well beyond n = 30).
Spherical Hankel functions use the upward three-term recurrence, which is
stable for h_n^(1) because the y_n part grows with order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import SphericalPosition


class DomainError(ValueError):
    """Raised when a special function is evaluated outside its domain."""


@dataclass(frozen=True)
class HarmonicIndex:
    """Order/degree pair (n, m) with |m| <= n."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 0 or abs(self.m) > self.n:
            raise ValueError(f"invalid harmonic index (n={self.n}, m={self.m})")

    @property
    def flat(self) -> int:
        return self.n * self.n + self.n + self.m


def num_harmonics(n_max: int) -> int:
    """Number of basis functions up to and including order ``n_max``."""
    return (n_max + 1) ** 2


def harmonic_orders(n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays of order n and degree m for each flat index in [0, (n_max+1)^2)."""
    n = np.repeat(np.arange(n_max + 1), 2 * np.arange(n_max + 1) + 1)
    m = np.concatenate([np.arange(-k, k + 1) for k in range(n_max + 1)])
    return n, m


def spherical_harmonics_matrix(
    n_max: int, theta: np.ndarray, phi: np.ndarray
) -> np.ndarray:
    """Evaluate all Y_n^m up to order ``n_max`` at the given angles.

    Parameters
    ----------
    n_max : int
        Maximum order (inclusive), >= 0.
    theta, phi : array_like
        Zenith and azimuth angles in radians, broadcast against each other.

    Returns
    -------
    ndarray of complex, shape broadcast(theta, phi).shape + ((n_max+1)^2,)
        Column n^2 + n + m holds Y_n^m(theta, phi).
    """
    if n_max < 0:
        raise DomainError(f"n_max must be >= 0, got {n_max}")
    theta, phi = np.broadcast_arrays(
        np.asarray(theta, dtype=float), np.asarray(phi, dtype=float)
    )
    ct = np.cos(theta)
    st = np.sin(theta)
    out = np.empty(theta.shape + (num_harmonics(n_max),), dtype=complex)

    # p_mm is the fully normalized P~_m^m(cos theta) including Condon-Shortley.
    p_mm = np.full(theta.shape, 1.0 / math.sqrt(4.0 * math.pi))
    for m in range(n_max + 1):
        if m > 0:
            p_mm = -math.sqrt((2 * m + 1) / (2.0 * m)) * st * p_mm
        e_imphi = np.exp(1j * m * phi)
        _store_degree_pair(out, m, m, p_mm, e_imphi)
        if m + 1 <= n_max:
            p_prev, p_curr = p_mm, math.sqrt(2 * m + 3) * ct * p_mm
            _store_degree_pair(out, m + 1, m, p_curr, e_imphi)
            for n in range(m + 2, n_max + 1):
                a = math.sqrt((4 * n * n - 1) / (n * n - m * m))
                b = math.sqrt(
                    ((n - 1) ** 2 - m * m) / (4.0 * (n - 1) ** 2 - 1)
                )
                p_prev, p_curr = p_curr, a * (ct * p_curr - b * p_prev)
                _store_degree_pair(out, n, m, p_curr, e_imphi)
    return out


def _store_degree_pair(out, n, m, p_nm, e_imphi):
    """Write Y_n^m = P~_n^m e^{im phi} and Y_n^-m = (-1)^m conj(Y_n^m)."""
    base = n * n + n
    y = p_nm * e_imphi
    out[..., base + m] = y
    if m > 0:
        out[..., base - m] = (-1) ** m * np.conj(y)


def spherical_harmonic(idx: HarmonicIndex, theta: float, phi: float) -> complex:
    """Single orthonormal spherical harmonic Y_n^m(theta, phi)."""
    return complex(spherical_harmonics_matrix(idx.n, theta, phi)[..., idx.flat])


def spherical_hankel_h1_all(n_max: int, x: np.ndarray) -> np.ndarray:
    """Spherical Hankel functions h_n^(1)(x) for all orders 0..n_max.

    Parameters
    ----------
    n_max : int
        Maximum order (inclusive), >= 0.
    x : array_like
        Arguments, all > 0.

    Returns
    -------
    ndarray of complex, shape x.shape + (n_max+1,)
    """
    if n_max < 0:
        raise DomainError(f"n_max must be >= 0, got {n_max}")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise DomainError("spherical Hankel functions require x > 0")
    out = np.empty(x.shape + (n_max + 1,), dtype=complex)
    h0 = -1j * np.exp(1j * x) / x
    out[..., 0] = h0
    if n_max >= 1:
        out[..., 1] = h0 * (1.0 / x - 1j)
        for n in range(1, n_max):
            out[..., n + 1] = (2 * n + 1) / x * out[..., n] - out[..., n - 1]
    return out


def spherical_hankel_h1(n: int, x: float) -> complex:
    """Spherical Hankel function of the first kind, h_n^(1)(x), x > 0."""
    return complex(spherical_hankel_h1_all(n, np.asarray(x, dtype=float))[..., n])


def basis_matrix(
    r: np.ndarray, theta: np.ndarray, phi: np.ndarray, k: float, n_max: int
) -> np.ndarray:
    """Spherical wavefunction basis h_n^(1)(k r) Y_n^m(theta, phi).

    Parameters
    ----------
    r, theta, phi : array_like, shape (B,)
        Spherical coordinates of the evaluation points.
    k : float
        Wavenumber in rad/m, > 0.
    n_max : int
        Truncation order.

    Returns
    -------
    ndarray of complex, shape (B, (n_max+1)^2)
    """
    if k <= 0.0:
        raise DomainError(f"wavenumber must be positive, got {k}")
    y = spherical_harmonics_matrix(n_max, theta, phi)
    h = spherical_hankel_h1_all(n_max, np.asarray(r, dtype=float) * k)
    orders, _ = harmonic_orders(n_max)
    return h[..., orders] * y


def basis_row(pos: SphericalPosition, k: float, n_max: int) -> np.ndarray:
    """Basis values at one position; length (n_max+1)^2."""
    return basis_matrix(
        np.asarray([pos.r]), np.asarray([pos.theta]), np.asarray([pos.phi]), k, n_max
    )[0]


def wavenumber(frequency_hz: float, speed_of_sound: float = 343.0) -> float:
    """k = 2 pi f / v for a frequency in Hz."""
    if frequency_hz <= 0.0:
        raise DomainError(f"frequency must be positive, got {frequency_hz}")
    return 2.0 * math.pi * frequency_hz / speed_of_sound
