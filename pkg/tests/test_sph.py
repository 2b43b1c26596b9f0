import math

import numpy as np
import pytest
import scipy.special

from hrtfup.geom import SphericalPosition
from hrtfup.sph import (
    DomainError,
    HarmonicIndex,
    basis_matrix,
    basis_row,
    harmonic_orders,
    num_harmonics,
    spherical_hankel_h1,
    spherical_hankel_h1_all,
    spherical_harmonic,
    spherical_harmonics_matrix,
    wavenumber,
)


# ---------------------------------------------------------------------------
# spherical harmonics
# ---------------------------------------------------------------------------


def test_y00_is_constant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        y = spherical_harmonic(HarmonicIndex(0, 0), theta, phi)
        assert y == pytest.approx(1.0 / math.sqrt(4 * math.pi), rel=1e-15)


def test_y10_at_pole():
    y = spherical_harmonic(HarmonicIndex(1, 0), 0.0, 0.0)
    assert y.real == pytest.approx(math.sqrt(3.0 / (4 * math.pi)), rel=1e-15)
    assert y.imag == 0.0


def test_conjugation_symmetry():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        for n in range(0, 8):
            for m in range(0, n + 1):
                y_pos = spherical_harmonic(HarmonicIndex(n, m), theta, phi)
                y_neg = spherical_harmonic(HarmonicIndex(n, -m), theta, phi)
                worst = max(worst, abs(y_neg - (-1) ** m * np.conj(y_pos)))
    assert worst < 1e-13


def test_matches_scipy_convention():
    # scipy's sph_harm_y uses the same orthonormal Condon-Shortley convention.
    rng = np.random.default_rng(2)
    theta = rng.uniform(0.01, math.pi - 0.01, size=50)
    phi = rng.uniform(0, 2 * math.pi, size=50)
    ours = spherical_harmonics_matrix(12, theta, phi)
    for n in range(13):
        for m in range(-n, n + 1):
            ref = scipy.special.sph_harm_y(n, m, theta, phi)
            np.testing.assert_allclose(
                ours[:, n * n + n + m], ref, rtol=1e-12, atol=1e-13
            )


def test_addition_theorem():
    rng = np.random.default_rng(3)
    theta = rng.uniform(0, math.pi, size=30)
    phi = rng.uniform(0, 2 * math.pi, size=30)
    y = spherical_harmonics_matrix(19, theta, phi)
    orders, _ = harmonic_orders(19)
    for n in range(20):
        s = np.sum(np.abs(y[:, orders == n]) ** 2, axis=1)
        np.testing.assert_allclose(s, (2 * n + 1) / (4 * math.pi), rtol=1e-12)


def test_flat_index_layout():
    idx = HarmonicIndex(3, -2)
    assert idx.flat == 9 + 3 - 2
    n, m = harmonic_orders(3)
    assert n[idx.flat] == 3 and m[idx.flat] == -2
    assert num_harmonics(19) == 400


def test_invalid_index_rejected():
    with pytest.raises(ValueError):
        HarmonicIndex(1, 2)


# ---------------------------------------------------------------------------
# spherical Hankel functions
# ---------------------------------------------------------------------------


def test_h0_closed_form():
    # h_0^(1)(x) = -i e^{ix} / x, so at x = 1: sin(1) - i cos(1).
    h = spherical_hankel_h1(0, 1.0)
    assert h == pytest.approx(complex(math.sin(1.0), -math.cos(1.0)), rel=1e-15)


def test_h1_closed_form():
    # h_1^(1)(x) = -(e^{ix}/x)(1 + i/x), evaluated independently at x = 1.
    x = 1.0
    expected = -(np.exp(1j * x) / x) * (1.0 + 1j / x)
    h = spherical_hankel_h1(1, x)
    assert abs(h - expected) < 1e-12
    # cross-check through j_1 + i y_1
    jy = complex(
        scipy.special.spherical_jn(1, x), scipy.special.spherical_yn(1, x)
    )
    assert abs(h - jy) < 1e-12


def test_wronskian_identity():
    # j_n y_n' - j_n' y_n = 1/x^2; derivatives from f_n' = f_{n-1} - (n+1)/x f_n.
    n, x = 5, 3.0
    h = spherical_hankel_h1_all(n, np.asarray(x))
    j, y = h.real, h.imag
    jp = j[n - 1] - (n + 1) / x * j[n]
    yp = y[n - 1] - (n + 1) / x * y[n]
    wronskian = j[n] * yp - jp * y[n]
    assert abs(wronskian - 1.0 / x**2) < 1e-12


def test_recurrence_residual():
    x = np.concatenate([[0.1, 0.5], np.linspace(1.0, 300.0, 40)])
    h = spherical_hankel_h1_all(25, x)
    for n in range(1, 25):
        lhs = h[:, n + 1]
        rhs = (2 * n + 1) / x * h[:, n] - h[:, n - 1]
        rel = np.abs(lhs - rhs) / np.abs(lhs)
        assert rel.max() < 1e-10


def test_matches_scipy_hankel():
    x = np.geomspace(0.1, 300.0, 60)
    h = spherical_hankel_h1_all(25, x)
    for n in range(26):
        ref = scipy.special.spherical_jn(n, x) + 1j * scipy.special.spherical_yn(n, x)
        np.testing.assert_allclose(h[:, n], ref, rtol=1e-10)


def test_domain_error_nonpositive():
    with pytest.raises(DomainError):
        spherical_hankel_h1(0, 0.0)
    with pytest.raises(DomainError):
        spherical_hankel_h1(2, -1.0)


# ---------------------------------------------------------------------------
# wavefunction basis
# ---------------------------------------------------------------------------


def test_basis_row_order_zero():
    pos = SphericalPosition(1.47, 1.0, 2.0)
    k = wavenumber(1000.0)
    row = basis_row(pos, k, 0)
    assert row.shape == (1,)
    expected = spherical_hankel_h1(0, k * 1.47) / math.sqrt(4 * math.pi)
    assert row[0] == pytest.approx(expected, rel=1e-14)


def test_basis_row_length_order_19():
    pos = SphericalPosition(1.47, 0.3, 4.0)
    row = basis_row(pos, wavenumber(8000.0), 19)
    assert row.shape == (400,)


def test_basis_row_element_is_product():
    pos = SphericalPosition(1.47, 1.1, 0.7)
    k = wavenumber(4000.0)
    row = basis_row(pos, k, 4)
    idx = HarmonicIndex(2, 1)
    # Definition: the row is the elementwise product of the two
    # sub-operations evaluated separately.  Multiply their outputs here and
    # require bit identity.
    h = spherical_hankel_h1_all(4, np.asarray([k * pos.r]))[0]
    y = spherical_harmonics_matrix(4, np.asarray([pos.theta]), np.asarray([pos.phi]))[0]
    orders, _ = harmonic_orders(4)
    expected = h[orders] * y
    assert row[idx.flat] == expected[idx.flat]
    np.testing.assert_array_equal(row, expected)
    # and the scalar helpers agree to within one rounding of the product
    scalar = spherical_hankel_h1(2, k * pos.r) * spherical_harmonic(
        idx, pos.theta, pos.phi
    )
    assert scalar == pytest.approx(complex(row[idx.flat]), rel=1e-15)


def test_basis_matrix_rows_match_basis_row():
    rng = np.random.default_rng(4)
    r = rng.uniform(1.0, 2.0, size=5)
    theta = rng.uniform(0, math.pi, size=5)
    phi = rng.uniform(0, 2 * math.pi, size=5)
    k = wavenumber(2000.0)
    mat = basis_matrix(r, theta, phi, k, 3)
    assert mat.shape == (5, 16)
    for b in range(5):
        row = basis_row(SphericalPosition(r[b], theta[b], phi[b]), k, 3)
        np.testing.assert_array_equal(mat[b], row)
