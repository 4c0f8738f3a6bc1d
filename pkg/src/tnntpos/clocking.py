"""UE clock model, effective per-path parameters and satellite precompensation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_LIGHT, DelayExpansion, as_vec3, _separation

MAX_ABS_ETA = 1e-4


@dataclass(frozen=True)
class ClockState:
    """Initial clock offset (s) and fractional CFO of the UE oscillator."""

    delta_t0: float
    eta: float

    def __post_init__(self):
        if not abs(self.eta) < MAX_ABS_ETA:
            raise ValueError(f"|eta| must stay below {MAX_ABS_ETA}, got {self.eta}")


@dataclass(frozen=True)
class EffectiveParams:
    """Effective Doppler shift, Doppler rate (1/s) and delay (s) of one path."""

    gamma: float
    epsilon: float
    tau: float


@dataclass(frozen=True)
class Precomp:
    """Known satellite-to-BS Doppler, timing advance and transmit carrier."""

    psi_bs_bar: float
    tau_bs: float
    fc_bar: float


def ue_time(t, clock: ClockState):
    return t / (1 - clock.eta) + clock.delta_t0


def network_time(t_ue, clock: ClockState):
    return (t_ue - clock.delta_t0) * (1 - clock.eta)


def effective_params(exp: DelayExpansion, clock: ClockState) -> EffectiveParams:
    eta, dt = clock.eta, clock.delta_t0
    s = 1 - eta
    gamma = exp.psi * s + eta - exp.mu * s**2 * dt
    epsilon = 0.5 * exp.mu * s**2
    tau = exp.tau0_p + dt * s * (1 - exp.psi) + 0.5 * exp.mu * dt**2 * s**2
    return EffectiveParams(gamma, epsilon, tau)


def doppler_precomp(p_bs, p_sat, v_leo, v_earth, f_c: float, c: float = SPEED_OF_LIGHT) -> Precomp:
    r, d = _separation(p_bs, p_sat)
    psi = float(r @ (as_vec3(v_earth) - as_vec3(v_leo))) / (c * d)
    return Precomp(psi, d / c, f_c / (1 - psi))


def sampling_origin(tau_b: float, tau_s: float, eta: float) -> float:
    return min(tau_b / (1 - eta), tau_s / (1 - eta))


def gamma_unambiguous_range(f_c: float, T_s: float, psi_bs_bar: float) -> float:
    return (1 - psi_bs_bar) / (f_c * T_s)


def residual_doppler(gamma_s, psi_bs_bar):
    """Doppler left on the satellite carrier after precompensation."""
    return 1 - (1 - gamma_s) / (1 - psi_bs_bar)


def ambiguity_integer(gamma_res: float, psi_bs_bar: float, range_: float) -> int:
    """Whole unambiguous intervals separating a residual estimate from ``psi_bs_bar``."""
    return int(np.round((psi_bs_bar - gamma_res) / range_))


def wrap_gamma_s(gamma_res: float, psi_bs_bar: float, range_: float) -> float:
    """Representative of ``gamma_res`` modulo ``range_`` closest to the known Doppler.

    Slow-time phases only determine ``gamma_s`` modulo the unambiguous range;
    the precompensation value supplies the missing integer part.
    """
    return gamma_res + ambiguity_integer(gamma_res, psi_bs_bar, range_) * range_


def unwrap_gamma_s(gamma_s: float, range_: float) -> float:
    """Fold a Doppler factor into ``[-range/2, range/2)``."""
    return float((gamma_s + range_ / 2) % range_ - range_ / 2)
