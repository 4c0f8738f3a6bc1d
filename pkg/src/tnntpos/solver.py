"""Channel-domain estimates to UE position, clock offset, speed and CFO.

Position comes from the AoD ray out of the BS intersected with the
hyperboloid defined by the BS/satellite delay difference.  The clock offset
is a distance-weighted mix of the two delay residuals.  Speed and CFO follow
from the two Doppler factors once the heading is known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .clocking import Precomp
from .geometry import SPEED_OF_LIGHT, as_vec3, direction
from .waveform import ChannelParams


class OutOfCoverageError(RuntimeError):
    """No point on the AoD ray reproduces the measured delay difference."""


class IllConditionedError(RuntimeError):
    """The speed/CFO system is singular for this geometry."""


@dataclass(frozen=True)
class PositionalParams:
    p0: np.ndarray
    delta_t0: float
    speed: float
    eta: float
    alpha_b: complex
    alpha_s: complex


@dataclass(frozen=True)
class SolverInputs:
    channel: ChannelParams
    precomp: Precomp
    p_b: np.ndarray
    p_s: np.ndarray
    v_leo: np.ndarray
    v_earth: np.ndarray
    heading: np.ndarray
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        h = as_vec3(self.heading)
        if abs(np.linalg.norm(h) - 1.0) > 1e-9:
            raise ValueError("heading must have unit norm")

    @classmethod
    def from_world(cls, channel: ChannelParams, world) -> "SolverInputs":
        h = as_vec3(world.scenario.heading)
        return cls(channel, world.precomp, world.p_b, world.p_s, world.v_leo, world.v_earth,
                   h / np.linalg.norm(h), world.c)


def tdoa_residual(beta: float, inputs: SolverInputs) -> float:
    """Range-difference mismatch (metres) at distance ``beta`` along the ray."""
    ch = inputs.channel
    u = direction(ch.aod.elevation, ch.aod.azimuth)
    p = as_vec3(inputs.p_b) + beta * u
    target = inputs.c * (ch.tau_b - ch.tau_s_res - inputs.precomp.tau_bs)
    return beta - float(np.linalg.norm(p - as_vec3(inputs.p_s))) - target


def solve_position(inputs: SolverInputs, beta_max: float = 10e3, beta_step: float = 1.0,
                   xtol: float = 1e-6) -> np.ndarray:
    """Point on the AoD ray whose delay difference matches the estimates.

    The residual is scanned on a ``beta_step`` grid over ``(0, beta_max]``; the
    first bracketed root (smallest distance) is polished with Brent's method.
    """
    ch = inputs.channel
    u = direction(ch.aod.elevation, ch.aod.azimuth)
    betas = np.arange(beta_step, beta_max + beta_step / 2, beta_step)
    betas = np.r_[1e-9, betas]
    r = np.array([tdoa_residual(b, inputs) for b in betas])
    sign = np.sign(r)
    hits = np.flatnonzero(sign[:-1] * sign[1:] <= 0)
    if hits.size == 0:
        k = int(np.argmin(np.abs(r)))
        if abs(r[k]) > beta_step:
            raise OutOfCoverageError("delay difference is not reproduced anywhere on the AoD ray")
        beta = betas[k]
    else:
        i = int(hits[0])
        if r[i] == 0:
            beta = betas[i]
        elif r[i + 1] == 0:
            beta = betas[i + 1]
        else:
            beta = brentq(tdoa_residual, betas[i], betas[i + 1], args=(inputs,), xtol=xtol * 1e-3, rtol=1e-15)
    return as_vec3(inputs.p_b) + beta * u


def clock_weight(p0_hat, p_b, p_s) -> float:
    """``D = |p0 - p_b| / |p0 - p_s|``: trust placed in the satellite residual."""
    p0_hat = as_vec3(p0_hat)
    return float(np.linalg.norm(p0_hat - as_vec3(p_b)) / np.linalg.norm(p0_hat - as_vec3(p_s)))


def solve_clock(inputs: SolverInputs, p0_hat) -> float:
    ch = inputs.channel
    p0_hat = as_vec3(p0_hat)
    c = inputs.c
    D = clock_weight(p0_hat, inputs.p_b, inputs.p_s)
    rb = ch.tau_b - np.linalg.norm(as_vec3(inputs.p_b) - p0_hat) / c
    rs = ch.tau_s_res + inputs.precomp.tau_bs - np.linalg.norm(as_vec3(inputs.p_s) - p0_hat) / c
    return float(rb / (D + 1) + D * rs / (D + 1))


def doppler_coefficients(inputs: SolverInputs, p0_hat) -> tuple[float, float, float]:
    """``(psi_N_b, psi_N_s, psi_tilde_s)``: unit-speed radial terms and the satellite part."""
    p0_hat = as_vec3(p0_hat)
    h = as_vec3(inputs.heading)
    c = inputs.c
    rb = p0_hat - as_vec3(inputs.p_b)
    rs = p0_hat - as_vec3(inputs.p_s)
    db, ds = np.linalg.norm(rb), np.linalg.norm(rs)
    psi_nb = float(rb @ h) / (c * db)
    psi_ns = float(rs @ h) / (c * ds)
    psi_ts = float(rs @ (as_vec3(inputs.v_earth) - as_vec3(inputs.v_leo))) / (c * ds)
    return psi_nb, psi_ns, psi_ts


def solve_speed_cfo(inputs: SolverInputs, p0_hat, gamma_b_hat: float, gamma_s_hat: float,
                    polish: bool = True) -> tuple[float, float]:
    """Speed along the heading and CFO from the two Doppler factors.

    The first-order solution treats ``gamma_i ~ psi_i + eta``.  With ``polish``
    the ``(1 - eta)`` scaling of the radial terms is kept: eliminating the
    speed through ``r = psi_N_s / psi_N_b`` leaves an equation linear in
    ``eta``, so the exact solution is still closed form.  It is written in the
    small quantities themselves, which avoids cancellation against 1.
    """
    psi_nb, psi_ns, psi_ts = doppler_coefficients(inputs, p0_hat)
    # psi_nb is at most 1/c in magnitude; below 1e-12/c the heading is
    # orthogonal to the BS line of sight and the BS Doppler carries no speed.
    if abs(psi_nb) * inputs.c < 1e-12:
        raise IllConditionedError("heading is orthogonal to the BS line of sight")
    den = psi_nb - psi_ns
    if den == 0.0:
        raise IllConditionedError("BS and satellite radial heading terms coincide")
    speed = (gamma_b_hat - gamma_s_hat + psi_ts) / den
    eta = gamma_b_hat - speed * psi_nb
    if polish:
        r = psi_ns / psi_nb
        eta = (gamma_s_hat - r * gamma_b_hat - psi_ts) / (1.0 - r - psi_ts)
        speed = (gamma_b_hat - eta) / ((1.0 - eta) * psi_nb)
    return float(speed), float(eta)


def solve_positional(inputs: SolverInputs, with_doppler: bool = True) -> PositionalParams:
    """Run the position, clock and (optionally) speed/CFO solvers in sequence."""
    p0 = solve_position(inputs)
    dt = solve_clock(inputs, p0)
    ch = inputs.channel
    if with_doppler and ch.gamma_b is not None and ch.gamma_s is not None:
        speed, eta = solve_speed_cfo(inputs, p0, ch.gamma_b, ch.gamma_s)
    else:
        speed, eta = float("nan"), float("nan")
    return PositionalParams(p0, dt, speed, eta, ch.alpha_b, ch.alpha_s)
