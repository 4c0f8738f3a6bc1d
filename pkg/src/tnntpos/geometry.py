"""Geometry of the BS / LEO / UE scene.

Positions and velocities are plain ``numpy`` arrays of shape ``(3,)`` in a
local East-North-Up frame (metres, metres/second).  The BS array lies in the
local y-z plane, so its broadside is the +x axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3e8  # m/s, the value used throughout the scenario tables


class DegenerateGeometryError(ValueError):
    """Raised when two points that must be distinct coincide."""


def as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector {v!r}")
    return v


@dataclass(frozen=True)
class Aod:
    """Angle of departure (radians)."""

    elevation: float
    azimuth: float

    def as_array(self) -> np.ndarray:
        return np.array([self.elevation, self.azimuth])


@dataclass(frozen=True)
class ArrayLayout:
    """Element offsets ``q_l`` (L x 3, BS local frame) and carrier wavelength."""

    element_offsets: np.ndarray
    wavelength: float

    @property
    def size(self) -> int:
        return int(self.element_offsets.shape[0])


@dataclass(frozen=True)
class DelayExpansion:
    """Second-order expansion ``tau(t) = tau0_p + psi t + mu t^2 / 2``."""

    tau0_p: float
    psi: float
    mu: float


def ue_position(p0, v, t: float) -> np.ndarray:
    return as_vec3(p0) + as_vec3(v) * t


def _separation(a, b) -> tuple[np.ndarray, float]:
    r = as_vec3(a) - as_vec3(b)
    d = float(np.linalg.norm(r))
    if d == 0.0:
        raise DegenerateGeometryError("coincident positions")
    return r, d


def aod_from_positions(p_ue, p_bs) -> Aod:
    r, d = _separation(p_ue, p_bs)
    el = float(np.arcsin(np.clip(r[2] / d, -1.0, 1.0)))
    az = float(np.arctan2(r[1], r[0])) if (r[0] != 0.0 or r[1] != 0.0) else 0.0
    return Aod(el, az)


def direction(elevation, azimuth) -> np.ndarray:
    """Unit pointing vector ``u(theta)``; broadcasts over array inputs."""
    el = np.asarray(elevation, dtype=float)
    az = np.asarray(azimuth, dtype=float)
    return np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
    )


def upa_layout(num_elements: int, wavelength: float) -> ArrayLayout:
    """Square UPA in the y-z plane at half-wavelength spacing.

    Offsets are measured from the array centroid, which is the BS phase
    centre ``p_b``.
    """
    side = int(round(np.sqrt(num_elements)))
    if side * side != num_elements or side < 1:
        raise ValueError(f"L={num_elements} is not a perfect square")
    idx = np.arange(side) - (side - 1) / 2
    iy, iz = np.meshgrid(idx, idx, indexing="ij")
    offsets = np.zeros((num_elements, 3))
    offsets[:, 1] = iy.ravel() * wavelength / 2
    offsets[:, 2] = iz.ravel() * wavelength / 2
    return ArrayLayout(offsets, wavelength)


def steering_vector(aod: Aod, layout: ArrayLayout) -> np.ndarray:
    u = direction(aod.elevation, aod.azimuth)
    return np.exp(1j * 2 * np.pi / layout.wavelength * (layout.element_offsets @ u))


def steering_matrix(elevations, azimuths, layout: ArrayLayout) -> np.ndarray:
    """Steering vectors for many directions, shape ``(..., L)``."""
    u = direction(elevations, azimuths)
    return np.exp(1j * 2 * np.pi / layout.wavelength * (u @ layout.element_offsets.T))


def quadratic_delay_expansion(p0, p_i, v_rel, c: float = SPEED_OF_LIGHT) -> DelayExpansion:
    r, d = _separation(p0, p_i)
    v = as_vec3(v_rel)
    psi = float(r @ v) / (c * d)
    mu = (float(v @ v) - (c * psi) ** 2) / (c * d)
    return DelayExpansion(d / c, psi, mu)


def slant_range(elevation: float, altitude: float, earth_radius: float) -> float:
    s = np.sin(elevation)
    R = earth_radius
    return float(np.sqrt((R * s) ** 2 + 2 * R * altitude + altitude**2) - R * s)


def satellite_state(
    elevation: float,
    azimuth: float,
    altitude: float,
    earth_radius: float,
    anchor,
    orbit_direction,
    speed: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Satellite position on a spherical Earth and its velocity.

    ``elevation`` may exceed pi/2, meaning the satellite has passed the zenith
    and sits on the opposite side of ``azimuth``.
    """
    if not 0.0 < elevation <= np.pi:
        raise ValueError("elevation must lie in (0, pi]")
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    d = slant_range(elevation, altitude, earth_radius)
    pos = as_vec3(anchor) + d * direction(elevation, azimuth)
    od = as_vec3(orbit_direction)
    return pos, speed * od / np.linalg.norm(od)


def circular_orbit_direction(p_sat, anchor, earth_radius: float, along) -> np.ndarray:
    """Unit vector along ``along`` made tangent to the orbit sphere at ``p_sat``.

    The Earth centre is taken directly below ``anchor``.
    """
    centre = as_vec3(anchor) - np.array([0.0, 0.0, earth_radius])
    radial = as_vec3(p_sat) - centre
    radial /= np.linalg.norm(radial)
    a = as_vec3(along)
    t = a - (a @ radial) * radial
    n = np.linalg.norm(t)
    if n == 0.0:
        raise DegenerateGeometryError("orbit direction parallel to the radial axis")
    return t / n


def channel_gain_bs(p_ue, p_bs, wavelength: float, q_exp: float = 0.57) -> float:
    r, d = _separation(p_ue, p_bs)
    el = np.arcsin(np.clip(r[2] / d, -1.0, 1.0))
    return float(np.sqrt(np.cos(el) ** q_exp) * wavelength / (4 * np.pi * d))


def channel_gain_sat(p_ue, p_sat, wavelength: float) -> float:
    _, d = _separation(p_ue, p_sat)
    return float(wavelength / (4 * np.pi * d))
