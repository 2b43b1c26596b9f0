"""Source-position coordinate conventions and transforms.

Positions live on a sphere around the listener's head: +x is the viewing
direction, +z points to the top of the head.  Spherical coordinates are
(r, theta, phi) with theta the zenith angle measured from +z and phi the
azimuth measured from +x towards +y.  Angles are radians everywhere inside
the library; degrees appear only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class ZeroRadius(ValueError):
    """Raised when a direction is requested for the zero vector."""


@dataclass(frozen=True)
class CartesianPosition:
    """Point in Cartesian coordinates, meters."""

    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class SphericalPosition:
    """Point in spherical coordinates.

    r in meters (> 0), theta the zenith angle in [0, pi], phi the azimuth
    normalized to [0, 2*pi).
    """

    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if not (self.r > 0.0):
            raise ZeroRadius(f"radius must be positive, got {self.r}")
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"zenith angle must lie in [0, pi], got {self.theta}")
        object.__setattr__(self, "phi", self.phi % TWO_PI)


def sph_to_cart(p: SphericalPosition) -> CartesianPosition:
    """Convert (r, theta, phi) to (x, y, z) = r*(sin t cos p, sin t sin p, cos t)."""
    st = math.sin(p.theta)
    return CartesianPosition(
        p.r * st * math.cos(p.phi),
        p.r * st * math.sin(p.phi),
        p.r * math.cos(p.theta),
    )


def cart_to_sph(p: CartesianPosition) -> SphericalPosition:
    """Convert Cartesian to spherical coordinates.

    At the poles (theta in {0, pi}) the azimuth is undefined and is
    canonicalized to phi = 0 so that round-trips are deterministic.

    Raises
    ------
    ZeroRadius
        If ``p`` is the zero vector.
    """
    r = p.norm()
    if r == 0.0:
        raise ZeroRadius("cannot convert the zero vector to spherical coordinates")
    rho = math.hypot(p.x, p.y)
    theta = math.atan2(rho, p.z)
    phi = 0.0 if rho == 0.0 else math.atan2(p.y, p.x) % TWO_PI
    return SphericalPosition(r, theta, phi)


def cart_to_sph_array(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized Cartesian -> (r, theta, phi) for an (..., 3) array.

    Same conventions as :func:`cart_to_sph`; raises :class:`ZeroRadius` if
    any row has zero norm.
    """
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    rho = np.hypot(x, y)
    r = np.hypot(rho, z)
    if np.any(r == 0.0):
        raise ZeroRadius("zero-norm position in input array")
    theta = np.arctan2(rho, z)
    phi = np.where(rho == 0.0, 0.0, np.arctan2(y, x) % TWO_PI)
    return r, theta, phi


def sph_to_cart_array(r: np.ndarray, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Vectorized spherical -> Cartesian, stacking (x, y, z) on the last axis."""
    r = np.asarray(r, dtype=float)
    st = np.sin(theta)
    return np.stack(
        [r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)], axis=-1
    )
