"""HRTF interpolation by ridge regression over spherical wavefunctions.

Per frequency bin, the measured transfer functions are fitted with the
exterior basis h_n^(1)(k r) Y_n^m(theta, phi) under a Tikhonov penalty
whose diagonal weights are 1 + n(n+1), and re-synthesized at the target
positions.  The two steps are a complex linear fit and a matrix-vector
product; everything here is stateless and safe to parallelize over
(subject, channel, frequency bin).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import geom, sph


class SingularSystem(RuntimeError):
    """Raised when the regularized normal matrix cannot be factorized."""


@dataclass(frozen=True)
class RlrConfig:
    """Settings for the ridge fit.

    lambda_ is the regularization weight, n_max the maximum truncation
    order.  When frequency_dependent_truncation is on, each bin uses
    min(ceil(e * k * R / 2), n_max) with R the radius of the region that
    must enclose the listener's head.
    """

    lambda_: float
    n_max: int
    frequency_dependent_truncation: bool = True
    R: float = 0.45
    v: float = 343.0

    def __post_init__(self):
        if not self.lambda_ > 0.0:
            raise ValueError(f"lambda_ must be positive, got {self.lambda_}")
        if self.n_max < 0:
            raise ValueError(f"n_max must be >= 0, got {self.n_max}")
        if not self.R > 0.0:
            raise ValueError(f"R must be positive, got {self.R}")


@dataclass(frozen=True)
class CoefficientVector:
    """Expansion coefficients for one frequency bin with their order."""

    values: np.ndarray  # complex, length (n_max+1)^2, or (length, K)
    n_max: int

    def __post_init__(self):
        if self.values.shape[0] != sph.num_harmonics(self.n_max):
            raise ValueError(
                f"coefficient vector of length {self.values.shape[0]} does not "
                f"match order {self.n_max}"
            )


def truncation_order(k: float, cfg: RlrConfig) -> int:
    """Effective truncation order for wavenumber ``k``.

    min(ceil(e * k * R / 2), n_max) under frequency-dependent truncation,
    otherwise n_max.
    """
    if not cfg.frequency_dependent_truncation:
        return cfg.n_max
    return min(math.ceil(math.e * k * cfg.R / 2.0), cfg.n_max)


def regularizer_diag(n_max: int) -> np.ndarray:
    """Diagonal penalty weights 1 + n(n+1), one per basis function."""
    orders, _ = sph.harmonic_orders(n_max)
    return 1.0 + orders * (orders + 1.0)


def _position_arrays(positions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Accept a list of SphericalPosition or an (B, 3) Cartesian array."""
    if isinstance(positions, np.ndarray):
        return geom.cart_to_sph_array(positions)
    r = np.array([p.r for p in positions])
    theta = np.array([p.theta for p in positions])
    phi = np.array([p.phi for p in positions])
    return r, theta, phi


def build_design_matrix(positions, k: float, n_max: int) -> np.ndarray:
    """Basis matrix with one row per position, (B, (n_max+1)^2) complex."""
    r, theta, phi = _position_arrays(positions)
    if r.size == 0:
        raise ValueError("positions must be nonempty")
    return sph.basis_matrix(r, theta, phi, k, n_max)


def fit_coefficients(
    p: np.ndarray, phi_matrix: np.ndarray, d: np.ndarray, lambda_: float
) -> np.ndarray:
    """Solve (Phi^H Phi + lambda diag(d)) c = Phi^H p by Cholesky factorization.

    Parameters
    ----------
    p : complex array, shape (B,) or (B, K)
        Observed values; multiple right-hand sides share one factorization.
    phi_matrix : complex array, shape (B, M)
    d : real array, shape (M,)
        Diagonal penalty weights, all > 0.
    lambda_ : float
        Regularization weight.

    Returns
    -------
    Coefficients with shape (M,) or (M, K).

    Raises
    ------
    SingularSystem
        If the factorization fails (possible only for lambda_ = 0).
    """
    p = np.asarray(p, dtype=complex)
    phi_matrix = np.asarray(phi_matrix, dtype=complex)
    d = np.asarray(d, dtype=float)
    if lambda_ < 0.0:
        raise ValueError(f"lambda_ must be >= 0, got {lambda_}")
    if phi_matrix.ndim != 2 or p.shape[0] != phi_matrix.shape[0]:
        raise ValueError(
            f"shape mismatch: p {p.shape} vs design matrix {phi_matrix.shape}"
        )
    if d.shape != (phi_matrix.shape[1],):
        raise ValueError(f"penalty diagonal {d.shape} does not match basis size")

    # Column equilibration: exact reparameterization that tames the wildly
    # different magnitudes of high-order Hankel factors at low frequencies.
    col_scale = np.linalg.norm(phi_matrix, axis=0)
    col_scale[col_scale == 0.0] = 1.0
    phi_s = phi_matrix / col_scale
    d_s = d / col_scale**2

    normal = phi_s.conj().T @ phi_s
    normal[np.diag_indices_from(normal)] += lambda_ * d_s
    rhs = phi_s.conj().T @ p
    try:
        factor = scipy.linalg.cho_factor(normal, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(f"normal matrix factorization failed: {exc}") from exc
    c_scaled = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    return (c_scaled.T / col_scale).T


def synthesize(c, targets, k: float) -> np.ndarray:
    """Evaluate the expansion at target positions: Phi_targets @ c."""
    if isinstance(c, CoefficientVector):
        values, n_max = c.values, c.n_max
    else:
        values = np.asarray(c)
        n_max = int(round(math.sqrt(values.shape[0]))) - 1
        if sph.num_harmonics(n_max) != values.shape[0]:
            raise ValueError(
                f"coefficient length {values.shape[0]} is not a perfect square"
            )
    return build_design_matrix(targets, k, n_max) @ values


def rlr_interpolate(
    measured_complex: np.ndarray,
    measured_positions: np.ndarray,
    frequencies: np.ndarray,
    cfg: RlrConfig,
    target_positions: np.ndarray,
) -> np.ndarray:
    """Interpolate complex HRTFs from measured to target positions.

    Parameters
    ----------
    measured_complex : complex array, shape (S, B', C, L)
        Measured transfer functions.
    measured_positions : (B', 3) Cartesian meters.
    frequencies : (L,) Hz.
    cfg : RlrConfig
    target_positions : (B, 3) Cartesian meters.

    Returns
    -------
    complex array, shape (S, B, C, L)
        Estimates at the target positions.  Magnitudes are taken only at
        the evaluation boundary by the caller.
    """
    s_count, b_meas, channels, l_count = measured_complex.shape
    if measured_positions.shape != (b_meas, 3):
        raise ValueError(
            f"measured positions {measured_positions.shape} do not match data "
            f"with {b_meas} positions"
        )
    if frequencies.shape != (l_count,):
        raise ValueError("frequency axis does not match data")
    b_tgt = target_positions.shape[0]

    r_m, th_m, ph_m = geom.cart_to_sph_array(measured_positions)
    r_t, th_t, ph_t = geom.cart_to_sph_array(target_positions)

    out = np.empty((s_count, b_tgt, channels, l_count), dtype=complex)
    for l in range(l_count):
        k = sph.wavenumber(float(frequencies[l]), cfg.v)
        n_l = truncation_order(k, cfg)
        phi_m = sph.basis_matrix(r_m, th_m, ph_m, k, n_l)
        d = regularizer_diag(n_l)
        # one factorization serves all subjects and channels of this bin
        rhs = measured_complex[:, :, :, l].transpose(1, 0, 2).reshape(b_meas, -1)
        coeffs = fit_coefficients(rhs, phi_m, d, cfg.lambda_)
        phi_t = sph.basis_matrix(r_t, th_t, ph_t, k, n_l)
        est = phi_t @ coeffs
        out[:, :, :, l] = est.reshape(b_tgt, s_count, channels).transpose(1, 0, 2)
    return out
