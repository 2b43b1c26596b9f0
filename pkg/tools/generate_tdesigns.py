#!/usr/bin/env python3
"""Generate the spherical t-design point files shipped in hrtfup/designs/.

A spherical t-design is a point set whose equal-weight average integrates
every spherical polynomial up to degree t exactly.  We need designs with
exactly (t+1)^2 points for t = 2..13 (measurement grids of 9..196 points).
Such designs are known to exist; this tool finds them numerically.

Method: minimize the variational criterion

    A_t(X) = (1/T^2) sum_{i,j} sum_{n=1}^{t} (2n+1) P_n(x_i . x_j) >= 0,

which vanishes exactly at a t-design, using L-BFGS with an analytic
gradient, then polish with Gauss-Newton on the first-moment residuals
mean_i Y_n^m(x_i) for 1 <= n <= t.  Each candidate is verified by checking
those moments and the discrete orthonormality of the harmonics before the
file is written.

Usage: python3 tools/generate_tdesigns.py [--out src/hrtfup/designs]
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares, minimize

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hrtfup.sph import spherical_harmonics_matrix  # noqa: E402


def gegenbauer_sum_and_derivative(u: np.ndarray, t: int):
    """G(u) = sum_{n=1}^t (2n+1) P_n(u) and G'(u), via Legendre recurrences."""
    p_prev = np.ones_like(u)
    p_curr = u.copy()
    dp_prev = np.zeros_like(u)
    dp_curr = np.ones_like(u)
    g = 3.0 * p_curr
    dg = 3.0 * dp_curr
    for n in range(1, t):
        p_next = ((2 * n + 1) * u * p_curr - n * p_prev) / (n + 1)
        dp_next = dp_prev + (2 * n + 1) * p_curr
        p_prev, p_curr = p_curr, p_next
        dp_prev, dp_curr = dp_curr, dp_next
        g += (2 * (n + 1) + 1) * p_curr
        dg += (2 * (n + 1) + 1) * dp_curr
    return g, dg


def variational_objective(v: np.ndarray, t: int, npts: int):
    """A_t and its gradient w.r.t. the raw (unnormalized) point coordinates."""
    v = v.reshape(npts, 3)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    x = v / norms
    u = np.clip(x @ x.T, -1.0, 1.0)
    g, dg = gegenbauer_sum_and_derivative(u, t)
    f = g.sum() / npts**2
    grad_x = (2.0 / npts**2) * (dg @ x)
    # project onto the tangent of the sphere and undo the normalization
    grad_v = (grad_x - x * np.sum(grad_x * x, axis=1, keepdims=True)) / norms
    return f, grad_v.ravel()


def moment_residuals(v: np.ndarray, t: int, npts: int) -> np.ndarray:
    """Real/imaginary parts of mean_i Y_n^m(x_i) for 1 <= n <= t, m >= 0."""
    x = v.reshape(npts, 3)
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    theta = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
    phi = np.arctan2(x[:, 1], x[:, 0])
    y = spherical_harmonics_matrix(t, theta, phi).mean(axis=0)
    parts = []
    for n in range(1, t + 1):
        base = n * n + n
        parts.append([y[base].real])
        for m in range(1, n + 1):
            parts.append([y[base + m].real, y[base + m].imag])
    return np.concatenate(parts)


def spiral_points(npts: int, rng: np.random.Generator) -> np.ndarray:
    """Fibonacci spiral start with a small jitter."""
    k = np.arange(npts)
    z = 1.0 - (2.0 * k + 1.0) / npts
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    rho = np.sqrt(1.0 - z * z)
    x = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    x += 0.01 * rng.normal(size=x.shape)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def find_design(t: int, max_restarts: int = 40) -> np.ndarray:
    npts = (t + 1) ** 2
    for attempt in range(max_restarts):
        rng = np.random.default_rng(1000 * t + attempt)
        v0 = spiral_points(npts, rng).ravel()
        res = minimize(
            variational_objective,
            v0,
            args=(t, npts),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 50000, "ftol": 1e-18, "gtol": 1e-14},
        )
        polished = least_squares(
            moment_residuals,
            res.x,
            args=(t, npts),
            method="trf",
            jac="3-point",
            xtol=5e-16,
            ftol=5e-16,
            gtol=5e-16,
            max_nfev=400,
        )
        worst = np.abs(moment_residuals(polished.x, t, npts)).max()
        # ~1e-14 is the rounding floor of the moment means themselves
        if worst < 1e-13:
            x = polished.x.reshape(npts, 3)
            return x / np.linalg.norm(x, axis=1, keepdims=True)
        print(f"  t={t} attempt {attempt}: max moment {worst:.2e}, retrying")
    raise RuntimeError(f"no t-design found for t={t} after {max_restarts} restarts")


def verify_design(x: np.ndarray, t: int) -> tuple[float, float]:
    """Max first-moment error and max discrete-orthonormality error (n <= t/2)."""
    npts = x.shape[0]
    theta = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
    phi = np.arctan2(x[:, 1], x[:, 0])
    n_half = t // 2
    y = spherical_harmonics_matrix(max(t, n_half), theta, phi)
    moments = np.abs(y[:, 1 : (t + 1) ** 2].mean(axis=0)).max()
    ydes = y[:, : (n_half + 1) ** 2]
    gram = 4.0 * math.pi / npts * (ydes.conj().T @ ydes)
    ortho = np.abs(gram - np.eye(gram.shape[0])).max()
    return float(moments), float(ortho)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="src/hrtfup/designs", type=Path)
    ap.add_argument("--tmin", default=2, type=int)
    ap.add_argument("--tmax", default=13, type=int)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for t in range(args.tmin, args.tmax + 1):
        npts = (t + 1) ** 2
        x = find_design(t)
        moments, ortho = verify_design(x, t)
        path = args.out / f"tdesign_t{t}_n{npts}.txt"
        with open(path, "w") as fh:
            for row in x:
                fh.write(f"{row[0]:.17e} {row[1]:.17e} {row[2]:.17e}\n")
        print(f"t={t:2d} n={npts:3d}  moment={moments:.2e}  ortho={ortho:.2e}  -> {path}")


if __name__ == "__main__":
    main()
