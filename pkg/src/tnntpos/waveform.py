"""Pilots, precoders and synthesis of the N x M observation grid.

Two families of builders live here:

* :func:`build_observation_generative` evaluates the full factored
  discrete-time model (ICI, slow-time and intersubcarrier Doppler, second
  order Doppler-rate terms, per-symbol gains and beam projections), and
  :func:`time_domain_oracle` evaluates the same received signal by brute
  force, sample by sample, straight from the continuous-time expression.
* :func:`build_observation_simplified` evaluates one of the four simplified
  models (Comm, SlowD, CCFODnoICI, CCFOD) from a channel parameter vector.

Delays passed to the simplified models are receiver-frame delays.  The
receiver opens its window at ``tau0``; the delay steering vectors therefore
use the window-relative delay of :func:`window_delay`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .clocking import Precomp, residual_doppler
from .geometry import (
    Aod,
    ArrayLayout,
    aod_from_positions,
    channel_gain_bs,
    channel_gain_sat,
    steering_matrix,
    steering_vector,
)

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import World


class ModelKind(str, enum.Enum):
    COMM = "Comm"
    SLOWD = "SlowD"
    CCFODNOICI = "CCFODnoICI"
    CCFOD = "CCFOD"
    GENERATIVE = "Generative"

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        for k in cls:
            if k.value.lower() == name.strip().lower():
                return k
        raise ValueError(f"unknown model kind {name!r}")

    @property
    def has_doppler(self) -> bool:
        return self is not ModelKind.COMM


SIMPLIFIED_KINDS = (ModelKind.COMM, ModelKind.SLOWD, ModelKind.CCFODNOICI, ModelKind.CCFOD)


@dataclass(frozen=True)
class Numerology:
    N: int
    M: int
    delta_f: float
    Tcp: float
    f_c: float

    def __post_init__(self):
        if self.N % 2 or self.N <= 0 or self.M <= 0:
            raise ValueError("N must be even and positive, M positive")
        if min(self.delta_f, self.Tcp, self.f_c) <= 0:
            raise ValueError("numerology values must be positive")

    @property
    def T0(self) -> float:
        return 1.0 / self.delta_f

    @property
    def Ts(self) -> float:
        return self.T0 + self.Tcp

    @property
    def g(self) -> float:
        """Cyclic-prefix fraction ``Tcp / T0``."""
        return self.Tcp / self.T0

    @property
    def even(self) -> np.ndarray:
        return np.arange(0, self.N, 2)

    @property
    def odd(self) -> np.ndarray:
        return np.arange(1, self.N, 2)

    def subcarriers(self, path: str) -> np.ndarray:
        return self.even if path == "b" else self.odd


@dataclass(frozen=True)
class PilotGrid:
    values: np.ndarray  # N x M
    bs_mask: np.ndarray
    sat_mask: np.ndarray

    def rows(self, path: str) -> np.ndarray:
        return self.values[self.bs_mask] if path == "b" else self.values[self.sat_mask]


@dataclass(frozen=True)
class AodSector:
    """Angular sector (radians) the BS sweeps and searches."""

    el_lo: float = np.deg2rad(-30.0)
    el_hi: float = np.deg2rad(30.0)
    az_lo: float = 0.0
    az_hi: float = np.deg2rad(90.0)

    @property
    def centre(self) -> Aod:
        return Aod(0.5 * (self.el_lo + self.el_hi), 0.5 * (self.az_lo + self.az_hi))


@dataclass(frozen=True)
class PrecoderSchedule:
    weights: np.ndarray  # M x L, row m is w_m
    repeat_prefix: int
    beam_directions: np.ndarray  # M x 2 (elevation, azimuth)

    def projections(self, steering: np.ndarray) -> np.ndarray:
        """``z`` for steering vectors of shape (..., L); returns (..., M)."""
        return steering @ self.weights.T


@dataclass(frozen=True)
class ObservationGrid:
    samples: np.ndarray
    noise_variance: float = 0.0


@dataclass(frozen=True)
class ChannelParams:
    """Channel-domain parameters.  Gains exclude the transmit power."""

    alpha_b: complex
    alpha_s: complex
    tau_b: float
    tau_s_res: float
    aod: Aod
    gamma_b: Optional[float] = None
    gamma_s: Optional[float] = None

    def with_(self, **kw) -> "ChannelParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class ModelContext:
    """Everything a receiver knows besides the observation itself."""

    numerology: Numerology
    pilots: PilotGrid
    precoders: PrecoderSchedule
    layout: ArrayLayout
    precomp: Precomp
    tau0: float
    power_b: float
    power_s: float


# --------------------------------------------------------------------------
# pilots and precoders


def generate_pilots(numerology: Numerology, seed: int) -> PilotGrid:
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(2, numerology.N, numerology.M))
    values = ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2)
    bs_mask = np.zeros(numerology.N, dtype=bool)
    bs_mask[0::2] = True
    return PilotGrid(values, bs_mask, ~bs_mask)


def _sweep_grid(count: int, sector: AodSector) -> np.ndarray:
    span_el = sector.el_hi - sector.el_lo
    span_az = sector.az_hi - sector.az_lo
    n_el = max(1, int(round(np.sqrt(count * span_el / span_az))))
    n_el = min(n_el, count)
    n_az = int(np.ceil(count / n_el))
    el = sector.el_lo + (np.arange(n_el) + 0.5) * span_el / n_el
    az = sector.az_lo + (np.arange(n_az) + 0.5) * span_az / n_az
    grid = np.array([(e, a) for e in el for a in az])
    return grid[:count]


def generate_precoders(
    numerology: Numerology,
    layout: ArrayLayout,
    P: int,
    codebook_seed: Optional[int] = None,
    sector: AodSector = AodSector(),
) -> PrecoderSchedule:
    """First ``P`` symbols reuse the sector-centre beam; the rest sweep a grid.

    The sweep runs in raster order unless ``codebook_seed`` is given, in which
    case the same set of beams is shuffled deterministically.
    """
    M = numerology.M
    if not 1 <= P <= M:
        raise ValueError(f"repeat prefix P={P} must satisfy 1 <= P <= M={M}")
    c = sector.centre
    dirs = np.empty((M, 2))
    dirs[:P] = (c.elevation, c.azimuth)
    if M > P:
        sweep = _sweep_grid(M - P, sector)
        if codebook_seed is not None:
            sweep = sweep[np.random.default_rng(codebook_seed).permutation(M - P)]
        dirs[P:] = sweep
    a = steering_matrix(dirs[:, 0], dirs[:, 1], layout)
    w = np.conj(a) / np.sqrt(layout.size)
    return PrecoderSchedule(w, P, dirs)


# --------------------------------------------------------------------------
# factor vectors shared by the simplified models


def window_delay(num: Numerology, tau: float, gamma: Optional[float], tau0: float) -> float:
    """Delay seen by the steering vector ``b`` for a receive window opened at ``tau0``.

    Doppler-aware models refer the delay to the first useful sample of the
    window, which folds the constant intersubcarrier phase offset (a linear
    phase ``gamma * g`` per subcarrier) into ``b``.
    """
    if gamma is None:
        return tau - tau0
    return tau - (1.0 - gamma) * tau0 + gamma * num.Tcp


def delay_from_window(num: Numerology, tau_win: float, gamma: Optional[float], tau0: float) -> float:
    """Inverse of :func:`window_delay`."""
    if gamma is None:
        return tau_win + tau0
    return tau_win + (1.0 - gamma) * tau0 - gamma * num.Tcp


def delay_vector(num: Numerology, path: str, tau_rel) -> np.ndarray:
    """``b(tau)``; ``tau_rel`` may be an array, giving shape (len, N/2)."""
    n = num.subcarriers(path)
    return np.exp(-2j * np.pi * num.delta_f * np.multiply.outer(tau_rel, n))


def carrier_coefficient(path: str, gamma, precomp: Precomp):
    """Per-second carrier phase rate divided by ``f_c``."""
    return gamma if path == "b" else residual_doppler(gamma, precomp.psi_bs_bar)


def slow_time_vector(num: Numerology, path: str, gamma, precomp: Precomp) -> np.ndarray:
    """``c(gamma)`` with the Doppler-rate terms removed; broadcasts over gamma."""
    m = np.arange(num.M)
    f = num.f_c * carrier_coefficient(path, np.asarray(gamma, dtype=float), precomp)
    return np.exp(-2j * np.pi * np.multiply.outer(f, m * num.Ts))


def intersubcarrier_matrix(num: Numerology, path: str, gamma: float) -> np.ndarray:
    n = num.subcarriers(path)
    m = np.arange(num.M)
    return np.exp(-2j * np.pi * gamma * (1 + num.g) * np.outer(n, m))


def ici_vector(num: Numerology, path: str, gamma: float, precomp: Precomp) -> np.ndarray:
    k = np.arange(num.N)
    f = num.f_c * carrier_coefficient(path, gamma, precomp)
    return np.exp(-2j * np.pi * f * num.T0 * k / num.N)


def fourier_matrix(num: Numerology, path: str, gamma: float = 0.0) -> np.ndarray:
    """``F_b`` / ``F_s``: IDFT columns of one path, scaled by ``1 - gamma``."""
    k = np.arange(num.N)
    n = num.subcarriers(path)
    return np.exp(2j * np.pi * (1.0 - gamma) * np.outer(k, n) / num.N) / np.sqrt(num.N)


def fourier_apply(num: Numerology, path: str, gamma: float, R: np.ndarray) -> np.ndarray:
    """``fourier_matrix(num, path, gamma) @ R`` through FFTs.

    ``exp(-j 2 pi gamma k n / N)`` is expanded in powers of ``gamma k n / N``;
    each power is separable in ``k`` and ``n``, so every term is one inverse
    FFT.  Terms are added until they fall below double precision.
    """
    N = num.N
    n = num.subcarriers(path).astype(float)
    k = np.arange(N, dtype=float)
    rows = slice(0, N, 2) if path == "b" else slice(1, N, 2)
    Z = np.zeros((N,) + R.shape[1:], dtype=complex)
    Z[rows] = R
    out = np.fft.ifft(Z, axis=0) * np.sqrt(N)
    x = 2 * np.pi * abs(gamma) * (N - 1) * n[-1] / N
    if gamma == 0.0 or x == 0.0:
        return out
    coef = 1.0 + 0j
    kp = np.ones(N)
    np_ = np.ones(n.size)
    bound = 1.0
    for p in range(1, 60):
        coef *= -2j * np.pi * gamma / p
        kp = kp * (k / N)
        np_ = np_ * n
        Z[rows] = np_[:, None] * R
        out += coef * kp[:, None] * (np.fft.ifft(Z, axis=0) * np.sqrt(N))
        bound *= x / p
        if bound < 1e-18:
            break
    return out


def beam_projection(aod: Aod, ctx: ModelContext) -> np.ndarray:
    return ctx.precoders.projections(steering_vector(aod, ctx.layout))


# --------------------------------------------------------------------------
# simplified models


@dataclass(frozen=True)
class Factors:
    """Which Doppler ingredients a simplified model keeps.

    ``slow_time``: ``c`` vectors and the ``(1 - gamma)`` origin shift in ``b``;
    ``intersubcarrier``: the ``I`` matrices; ``ici``: ``D`` vectors and the
    Doppler-scaled satellite Fourier matrix.
    """

    slow_time: bool
    intersubcarrier: bool
    ici: bool

    @classmethod
    def of(cls, kind: ModelKind) -> "Factors":
        kind = ModelKind(kind)
        return {
            ModelKind.COMM: cls(False, False, False),
            ModelKind.SLOWD: cls(True, False, False),
            ModelKind.CCFODNOICI: cls(True, True, False),
            ModelKind.CCFOD: cls(True, True, True),
        }[kind]


def reduced_bs(kind, params: ChannelParams, ctx: ModelContext) -> np.ndarray:
    """Unit-gain BS term before the Fourier matrix, shape N/2 x M."""
    num = ctx.numerology
    f = kind if isinstance(kind, Factors) else Factors.of(kind)
    gamma = params.gamma_b if f.slow_time else None
    b = delay_vector(num, "b", window_delay(num, params.tau_b, gamma, ctx.tau0))
    slow = beam_projection(params.aod, ctx)
    if f.slow_time:
        slow = slow * slow_time_vector(num, "b", gamma, ctx.precomp)
    r = np.outer(b, slow)
    if f.intersubcarrier:
        r = r * intersubcarrier_matrix(num, "b", params.gamma_b)
    return r * ctx.pilots.rows("b")


def reduced_sat(kind, params: ChannelParams, ctx: ModelContext) -> np.ndarray:
    num = ctx.numerology
    f = kind if isinstance(kind, Factors) else Factors.of(kind)
    gamma = params.gamma_s if f.slow_time else None
    b = delay_vector(num, "s", window_delay(num, params.tau_s_res, gamma, ctx.tau0))
    if f.slow_time:
        r = np.outer(b, slow_time_vector(num, "s", gamma, ctx.precomp))
    else:
        r = np.outer(b, np.ones(num.M))
    if f.intersubcarrier:
        r = r * intersubcarrier_matrix(num, "s", params.gamma_s)
    return r * ctx.pilots.rows("s")


def path_to_grid(kind, path: str, reduced: np.ndarray, gamma, ctx: ModelContext) -> np.ndarray:
    """Map a reduced path term to the N x M grid (Fourier matrix and ICI)."""
    num = ctx.numerology
    f = kind if isinstance(kind, Factors) else Factors.of(kind)
    if f.ici:
        fg = gamma if path == "s" else 0.0
        out = fourier_apply(num, path, fg, reduced)
        return out * ici_vector(num, path, gamma, ctx.precomp)[:, None]
    return fourier_apply(num, path, 0.0, reduced)


def bs_term(kind, params: ChannelParams, ctx: ModelContext) -> np.ndarray:
    r = reduced_bs(kind, params, ctx)
    return np.sqrt(ctx.power_b) * params.alpha_b * path_to_grid(kind, "b", r, params.gamma_b, ctx)


def sat_term(kind, params: ChannelParams, ctx: ModelContext) -> np.ndarray:
    r = reduced_sat(kind, params, ctx)
    return np.sqrt(ctx.power_s) * params.alpha_s * path_to_grid(kind, "s", r, params.gamma_s, ctx)


def build_observation_simplified(kind, params: ChannelParams, ctx: ModelContext) -> ObservationGrid:
    """Noise-free observation of a simplified model.

    ``kind`` is a :class:`ModelKind` or an explicit :class:`Factors` set, the
    latter being how individual factors are switched off.
    """
    if not isinstance(kind, Factors):
        kind = ModelKind(kind)
        if kind is ModelKind.GENERATIVE:
            raise ValueError("the generative model is built from a scenario, not from channel parameters")
    f = kind if isinstance(kind, Factors) else Factors.of(kind)
    if (f.slow_time or f.intersubcarrier or f.ici) and (params.gamma_b is None or params.gamma_s is None):
        raise ValueError("a Doppler-aware model needs both Doppler factors")
    return ObservationGrid(bs_term(f, params, ctx) + sat_term(f, params, ctx))


def simplified_elementwise(kind, params: ChannelParams, ctx: ModelContext) -> ObservationGrid:
    """Direct per-entry evaluation of a simplified model.

    Every ``Y[k, m]`` is the explicit sum over the path's subcarriers of the
    product of all scalar phase terms.  Nothing is shared with the factored
    builders apart from the window-delay convention, so agreement between the
    two is a check on the factorisation.  Cost is O(N^2 M): small grids only.
    """
    f = kind if isinstance(kind, Factors) else Factors.of(kind)
    num = ctx.numerology
    N, M, T0, Ts, g, fc = num.N, num.M, num.T0, num.Ts, num.g, num.f_c
    psi = ctx.precomp.psi_bs_bar
    k = np.arange(N)[:, None, None]
    m = np.arange(M)[None, None, :]
    z = beam_projection(params.aod, ctx)
    out = np.zeros((N, M), dtype=complex)
    for path, tau, gamma, gain, power in (
        ("b", params.tau_b, params.gamma_b, params.alpha_b, ctx.power_b),
        ("s", params.tau_s_res, params.gamma_s, params.alpha_s, ctx.power_s),
    ):
        n = np.arange(path == "s", N, 2)[None, :, None]
        x = ctx.pilots.values[n[0, :, 0]][None]
        gam = gamma if f.slow_time else None
        tw = tau - ctx.tau0 if gam is None else tau - (1 - gam) * ctx.tau0 + gam * num.Tcp
        rate = 0.0
        if gam is not None:
            rate = gam if path == "b" else 1 - (1 - gam) / (1 - psi)
        phase = k * n * (1 - (gamma if (f.ici and path == "s") else 0.0)) / N
        phase = phase - num.delta_f * n * tw
        if f.slow_time:
            phase = phase - fc * rate * m * Ts
        if f.intersubcarrier:
            phase = phase - gamma * (1 + g) * n * m
        if f.ici:
            phase = phase - fc * rate * T0 * k / N
        terms = np.exp(2j * np.pi * phase) * x / np.sqrt(N)
        if path == "b":
            terms = terms * z[None, None, :]
        out += np.sqrt(power) * gain * terms.sum(axis=1)
    return ObservationGrid(out)


# --------------------------------------------------------------------------
# generative model


@dataclass(frozen=True)
class PathTruth:
    """Effective parameters of one path in the receiver window frame."""

    gamma: float
    epsilon: float
    tau_win: float
    gain: np.ndarray  # per-symbol complex gain (includes beam projection)


def _shift_to_window(gamma: float, eps: float, tau: float, tau0: float) -> tuple[float, float]:
    """Re-expand ``(1-gamma) t' - tau - eps t'^2`` around ``t' = tau0``."""
    return gamma + 2 * eps * tau0, tau - (1 - gamma) * tau0 + eps * tau0**2


def symbol_instants(world: "World") -> np.ndarray:
    """Network time at the start of every receive window."""
    num = world.numerology
    t_ue = world.tau0 + np.arange(num.M) * num.Ts
    return (t_ue - world.clock.delta_t0) * (1 - world.clock.eta)


def path_gains(world: "World", time_varying: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-symbol BS gain times beam projection and per-symbol satellite gain."""
    M = world.numerology.M
    t = symbol_instants(world) if time_varying else np.zeros(M)
    lam = world.layout.wavelength
    gb = np.empty(M, dtype=complex)
    gs = np.empty(M)
    for m, tm in enumerate(t):
        p = world.p0 + world.v * tm
        aod = aod_from_positions(p, world.p_b)
        a = steering_vector(aod, world.layout)
        gb[m] = channel_gain_bs(p, world.p_b, lam, world.gain_exponent) * (world.precoders.weights[m] @ a)
        rel = world.p0 - world.p_s + world.v_su * tm
        gs[m] = channel_gain_sat(rel, np.zeros(3), lam)
    return gb, gs


def _factored_path(
    num: Numerology,
    path: str,
    truth: PathTruth,
    pilots: np.ndarray,
    precomp: Precomp,
    quadratic: bool,
    phase_offsets: bool,
    fourier_doppler: bool,
) -> np.ndarray:
    gamma, eps, tau = truth.gamma, truth.epsilon, truth.tau_win
    if not quadratic:
        eps = 0.0
    N, M, g, T0, Ts, Tcp = num.N, num.M, num.g, num.T0, num.Ts, num.Tcp
    k = np.arange(N)[:, None]
    n = num.subcarriers(path)
    m = np.arange(M)
    f_lin = num.f_c * carrier_coefficient(path, gamma, precomp)
    f_quad = num.f_c * eps / (1.0 if path == "b" else 1 - precomp.psi_bs_bar)

    kk = k[:, 0] * T0 / N
    D = np.exp(-2j * np.pi * (f_lin * kk + f_quad * (kk**2 + 2 * Tcp * kk)))
    mm = m * Ts
    c = np.exp(-2j * np.pi * (f_lin * mm + f_quad * (mm**2 + 2 * mm * Tcp)))
    H = np.exp(-2j * np.pi * 2 * f_quad * np.outer(kk, mm))
    I = np.exp(
        -2j * np.pi * (gamma * (1 + g) * np.outer(n, m) + eps * (1 + g) * Ts * np.outer(n, m**2)
                       + 2 * eps * g * Ts * np.outer(n, m))
    )
    q = np.exp(-2j * np.pi * gamma * g * n) if phase_offsets else np.ones(len(n))
    b = np.exp(-2j * np.pi * num.delta_f * n * tau)
    scale = (1 - gamma) if fourier_doppler else 1.0
    F0 = np.exp(2j * np.pi * (k * n * scale / N - eps * (k**2) * n * T0 / N**2
                              - 2 * eps * g * k * n * T0 / N)) / np.sqrt(N)
    step = np.exp(-2j * np.pi * 2 * n * eps * k * Ts / N)

    Y = np.empty((N, M), dtype=complex)
    Fm = F0.copy()
    for mi in range(M):
        inner = pilots[:, mi] * I[:, mi] * q * b * c[mi]
        Y[:, mi] = D * H[:, mi] * (Fm @ inner) * truth.gain[mi]
        if eps != 0.0:
            Fm *= step
    return Y


def generative_paths(
    world: "World",
    quadratic: bool = True,
    time_varying: bool = True,
    phase_offsets: bool = True,
    bs_fourier_doppler: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """BS and satellite contributions of the full model (power included)."""
    num = world.numerology
    gb, gs = path_gains(world, time_varying)
    eb, es = world.eff_b, world.eff_s
    eps_b = eb.epsilon if quadratic else 0.0
    eps_s = es.epsilon if quadratic else 0.0
    gam_b, tw_b = _shift_to_window(eb.gamma, eps_b, eb.tau, world.tau0)
    gam_s, tw_s = _shift_to_window(es.gamma, eps_s, world.tau_s_res, world.tau0)
    for tw, gam in ((tw_b, gam_b), (tw_s, gam_s)):
        drift = abs(gam) * num.M * num.Ts
        if not (-num.T0 / (2 * num.N) < tw and tw + drift < num.Tcp):
            raise ValueError(
                f"window-relative delay {tw:.3e} s leaves the cyclic prefix; "
                "effective delays must stay within Tcp"
            )
    yb = _factored_path(num, "b", PathTruth(gam_b, eps_b, tw_b, gb), world.pilots.rows("b"),
                        world.precomp, quadratic, phase_offsets, bs_fourier_doppler)
    ys = _factored_path(num, "s", PathTruth(gam_s, eps_s, tw_s, gs.astype(complex)),
                        world.pilots.rows("s"), world.precomp, quadratic, phase_offsets, True)
    return np.sqrt(world.power_b) * yb, np.sqrt(world.power_s) * ys


def build_observation_generative(world: "World", **flags) -> ObservationGrid:
    """Noise-free observation from the full factored model.

    Keyword flags (all default ``True``) switch off individual ingredients:
    ``quadratic`` (Doppler-rate terms), ``time_varying`` (per-symbol gains and
    AoD), ``phase_offsets`` (the constant intersubcarrier phase offsets) and
    ``bs_fourier_doppler`` (the ``1 - gamma_b`` scaling inside ``F_b``).
    """
    yb, ys = generative_paths(world, **flags)
    return ObservationGrid(yb + ys)


def time_domain_oracle(world: "World") -> ObservationGrid:
    """Sample-by-sample evaluation of the down-converted received signal.

    No factor matrices are used: for every receive instant the network time,
    the exact geometric delays and the transmitted OFDM symbol are evaluated
    directly.  Each path is referred to its carrier phase at the first sample,
    the same constant-phase convention as the factored builders.
    """
    num = world.numerology
    N, M = num.N, num.M
    c = world.c
    gb, gs = path_gains(world, True)
    out = np.zeros((N, M), dtype=complex)
    k = np.arange(N)
    for path in ("b", "s"):
        n = num.subcarriers(path)
        x = world.pilots.rows(path)
        ref = None
        Y = np.empty((N, M), dtype=complex)
        for m in range(M):
            t_ue = world.tau0 + m * num.Ts + num.Tcp + k * num.T0 / N
            t = (t_ue - world.clock.delta_t0) * (1 - world.clock.eta)
            if path == "b":
                rel = world.p0[None, :] + np.outer(t, world.v) - world.p_b[None, :]
                t_e = t - np.linalg.norm(rel, axis=1) / c
                f_tx = num.f_c
                gain = gb[m]
            else:
                rel = (world.p0 - world.p_s)[None, :] + np.outer(t, world.v_su)
                t_e = t - np.linalg.norm(rel, axis=1) / c + world.precomp.tau_bs
                f_tx = world.precomp.fc_bar
                gain = gs[m]
            local = t_e - m * num.Ts
            if np.any(local < 0) or np.any(local >= num.Ts):
                raise ValueError("sample falls outside the transmitted symbol")
            phase = np.exp(2j * np.pi * num.delta_f * np.outer(local - num.Tcp, n))
            sub = phase @ x[:, m] / np.sqrt(N)
            carrier = 2 * np.pi * (f_tx * t_e - num.f_c * t_ue)
            if ref is None:
                ref = carrier[0]
            Y[:, m] = gain * sub * np.exp(1j * (carrier - ref))
        power = world.power_b if path == "b" else world.power_s
        out += np.sqrt(power) * Y
    return ObservationGrid(out)


# --------------------------------------------------------------------------
# noise, SNR and binary dump


def add_noise(Y: ObservationGrid, sigma2: float, seed) -> ObservationGrid:
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if sigma2 == 0:
        return ObservationGrid(Y.samples.copy(), 0.0)
    rng = np.random.default_rng(seed)
    shape = Y.samples.shape
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return ObservationGrid(Y.samples + np.sqrt(sigma2 / 2) * w, float(sigma2))


def received_snr(path: str, world: "World", sigma2: float) -> float:
    """Per-subcarrier SNR of one path, ``P_i |alpha_i(0)|^2 / sigma2`` in dB."""
    if path in ("b", "bs"):
        p, a = world.power_b, world.truth.alpha_b
    elif path in ("s", "sat"):
        p, a = world.power_s, world.truth.alpha_s
    else:
        raise ValueError(f"unknown path {path!r}")
    return float(10 * np.log10(p * abs(a) ** 2 / sigma2))


OBS_MAGIC = b"TNNTOBS1"
_HEADER = struct.Struct("<8sIId")


def dump_observation(Y: ObservationGrid, path) -> None:
    """Write the grid: 24-byte header (magic, N, M, noise variance) then data.

    Data are row-major complex64 values, little-endian (real, imag pairs).
    """
    N, M = Y.samples.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(OBS_MAGIC, N, M, float(Y.noise_variance)))
        fh.write(np.ascontiguousarray(Y.samples, dtype="<c8").tobytes())


def load_observation(path) -> ObservationGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, N, M, s2 = _HEADER.unpack_from(raw)
    if magic != OBS_MAGIC:
        raise ValueError("not an observation dump")
    data = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size, count=N * M)
    return ObservationGrid(data.reshape(N, M).astype(complex), s2)
