"""Scenario parameters and the ground-truth world derived from them.

:class:`Scenario` is a flat, serialisable record whose defaults reproduce the
simulation table of the system (2 GHz carrier, 3300 subcarriers at 30 kHz,
64 symbols, 8x8 UPA, LEO at 600 km).  :func:`build_world` turns it into a
:class:`World` holding every derived quantity: positions, velocities, delay
expansions, effective clock-skewed parameters, satellite precompensation,
receiver sampling origin, pilots, precoders and the true channel parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .clocking import (
    ClockState,
    EffectiveParams,
    Precomp,
    doppler_precomp,
    effective_params,
    gamma_unambiguous_range,
    sampling_origin,
)
from .geometry import (
    ArrayLayout,
    DelayExpansion,
    aod_from_positions,
    as_vec3,
    channel_gain_bs,
    channel_gain_sat,
    circular_orbit_direction,
    quadratic_delay_expansion,
    satellite_state,
    upa_layout,
)
from .waveform import (
    AodSector,
    ChannelParams,
    ModelContext,
    Numerology,
    PilotGrid,
    PrecoderSchedule,
    generate_pilots,
    generate_precoders,
)

BOLTZMANN_DBM_PER_HZ = -174.0


def thermal_noise_dbm(bandwidth_hz: float) -> float:
    return BOLTZMANN_DBM_PER_HZ + 10 * np.log10(bandwidth_hz)


def dbm_to_mw(dbm: float) -> float:
    return float(10 ** (dbm / 10))


@dataclass(frozen=True)
class Scenario:
    """All user-facing knobs.  Units: SI, angles in degrees, powers in dBm."""

    carrier_frequency: float = 2e9
    speed_of_light: float = 3e8
    num_subcarriers: int = 3300
    subcarrier_spacing: float = 30e3
    symbol_duration: float = 35.7e-6
    num_symbols: int = 64
    num_antennas: int = 64
    repeat_prefix: int = 4
    altitude: float = 600e3
    sat_speed: float = 7800.0
    earth_speed: float = 465.0
    earth_radius: float = 6371e3
    earth_rotation_direction: tuple = (1.0, 0.0, 0.0)
    orbit_direction: tuple = (1.0, 0.0, 0.0)
    bs_position: tuple = (0.0, 0.0, 5.0)
    ue_position: tuple = (20.0, 50.0, 1.5)
    heading: tuple = (1.0, 0.0, 0.0)
    speed_mps: float = 15 / 3.6
    sat_elevation_deg: float = 88.0
    sat_azimuth_deg: float = 0.0
    delta_t0: float = 1e-9
    eta: float = 1e-8
    bs_power_dbm: float = 35.0
    sat_power_dbm: float = 65.0
    noise_dbm: Optional[float] = None
    gain_exponent: float = 0.57
    sector_el_deg: tuple = (-30.0, 30.0)
    sector_az_deg: tuple = (0.0, 90.0)
    pilot_seed: int = 7
    codebook_seed: Optional[int] = None

    def __post_init__(self):
        if self.symbol_duration <= 1.0 / self.subcarrier_spacing:
            raise ValueError("symbol_duration must exceed 1/subcarrier_spacing (positive cyclic prefix)")
        if self.num_subcarriers % 2:
            raise ValueError("num_subcarriers must be even (BS/satellite interleaving)")
        if self.speed_mps < 0:
            raise ValueError("speed_mps must be non-negative")

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @property
    def noise_dbm_value(self) -> float:
        """Per-sample noise power; thermal noise over one subcarrier by default."""
        if self.noise_dbm is None:
            return thermal_noise_dbm(self.subcarrier_spacing)
        return float(self.noise_dbm)

    @property
    def sigma2(self) -> float:
        return dbm_to_mw(self.noise_dbm_value)

    @property
    def numerology(self) -> Numerology:
        T0 = 1.0 / self.subcarrier_spacing
        return Numerology(
            self.num_subcarriers, self.num_symbols, self.subcarrier_spacing,
            self.symbol_duration - T0, self.carrier_frequency,
        )


@dataclass(frozen=True)
class World:
    scenario: Scenario
    numerology: Numerology
    layout: ArrayLayout
    c: float
    p_b: np.ndarray
    p0: np.ndarray
    v: np.ndarray
    v_earth: np.ndarray
    p_s: np.ndarray
    v_leo: np.ndarray
    v_su: np.ndarray
    clock: ClockState
    exp_b: DelayExpansion
    exp_s: DelayExpansion
    eff_b: EffectiveParams
    eff_s: EffectiveParams
    precomp: Precomp
    tau_s_res: float
    tau0: float
    gain_exponent: float
    pilots: PilotGrid
    precoders: PrecoderSchedule
    sector: AodSector
    power_b: float
    power_s: float
    sigma2: float
    truth: ChannelParams = field(repr=False)

    @property
    def context(self) -> ModelContext:
        return ModelContext(
            self.numerology, self.pilots, self.precoders, self.layout,
            self.precomp, self.tau0, self.power_b, self.power_s,
        )

    @property
    def gamma_range(self) -> float:
        return gamma_unambiguous_range(self.numerology.f_c, self.numerology.Ts, self.precomp.psi_bs_bar)


def build_world(sc: Scenario) -> World:
    num = sc.numerology
    c = sc.speed_of_light
    lam = c / sc.carrier_frequency
    layout = upa_layout(sc.num_antennas, lam)
    p_b = as_vec3(sc.bs_position)
    p0 = as_vec3(sc.ue_position)
    h = as_vec3(sc.heading)
    if sc.speed_mps > 0 and np.linalg.norm(h) == 0:
        raise ValueError("heading must be non-zero for a moving UE")
    v = sc.speed_mps * h / (np.linalg.norm(h) if np.linalg.norm(h) > 0 else 1.0)
    e = as_vec3(sc.earth_rotation_direction)
    v_earth = sc.earth_speed * e / np.linalg.norm(e)

    el = np.deg2rad(sc.sat_elevation_deg)
    az = np.deg2rad(sc.sat_azimuth_deg)
    p_s, _ = satellite_state(el, az, sc.altitude, sc.earth_radius, p_b, sc.orbit_direction, sc.sat_speed)
    od = circular_orbit_direction(p_s, p_b, sc.earth_radius, sc.orbit_direction)
    v_leo = sc.sat_speed * od
    v_su = v + v_earth - v_leo

    clock = ClockState(sc.delta_t0, sc.eta)
    exp_b = quadratic_delay_expansion(p0, p_b, v, c)
    exp_s = quadratic_delay_expansion(p0, p_s, v_su, c)
    eff_b = effective_params(exp_b, clock)
    eff_s = effective_params(exp_s, clock)
    # The BS is static on the rotating Earth, so it sees the satellite moving at v_LEO - v_E.
    precomp = doppler_precomp(p_b, p_s, v_leo, v_earth, sc.carrier_frequency, c)
    tau_s_res = eff_s.tau - precomp.tau_bs
    tau0 = sampling_origin(eff_b.tau, tau_s_res, sc.eta)

    sector = AodSector(*np.deg2rad(sc.sector_el_deg), *np.deg2rad(sc.sector_az_deg))
    pilots = generate_pilots(num, sc.pilot_seed)
    precoders = generate_precoders(num, layout, sc.repeat_prefix, sc.codebook_seed, sector)

    truth = ChannelParams(
        alpha_b=complex(channel_gain_bs(p0, p_b, lam, sc.gain_exponent)),
        alpha_s=complex(channel_gain_sat(p0, p_s, lam)),
        tau_b=eff_b.tau,
        tau_s_res=tau_s_res,
        aod=aod_from_positions(p0, p_b),
        gamma_b=eff_b.gamma,
        gamma_s=eff_s.gamma,
    )
    return World(
        scenario=sc, numerology=num, layout=layout, c=c, p_b=p_b, p0=p0, v=v,
        v_earth=v_earth, p_s=p_s, v_leo=v_leo, v_su=v_su, clock=clock,
        exp_b=exp_b, exp_s=exp_s, eff_b=eff_b, eff_s=eff_s, precomp=precomp,
        tau_s_res=tau_s_res, tau0=tau0, gain_exponent=sc.gain_exponent,
        pilots=pilots, precoders=precoders, sector=sector,
        power_b=dbm_to_mw(sc.bs_power_dbm), power_s=dbm_to_mw(sc.sat_power_dbm),
        sigma2=sc.sigma2, truth=truth,
    )
