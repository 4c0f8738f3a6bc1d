"""Cramér-Rao bounds and mismatched-model bias.

The channel-domain FIM is assembled from numerical derivatives of the noise-free
mean of a simplified model and mapped to the positional parameters
``(p0, delta_t0, |v|, eta, alpha_b, alpha_s)`` through a numerical Jacobian
of the geometry/clock chain.  The mismatch bias is the distance between the
true positional parameters and the pseudo-true ones, i.e. the minimiser of the
noise-free fit of the simplified model to the generative observation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .clocking import ClockState, effective_params
from .geometry import aod_from_positions, as_vec3, quadratic_delay_expansion
from .waveform import (
    ChannelParams,
    ModelKind,
    build_observation_generative,
    build_observation_simplified,
)

POS_NAMES = ("x", "y", "z", "delta_t0", "speed", "eta", "alpha_b_re", "alpha_b_im", "alpha_s_re", "alpha_s_im")


def channel_vector(params: ChannelParams, kind: ModelKind) -> np.ndarray:
    """Real parameterisation ``[Re a_b, Im a_b, Re a_s, Im a_s, tau_b, tau_s, el, az, (g_b, g_s)]``."""
    v = [params.alpha_b.real, params.alpha_b.imag, params.alpha_s.real, params.alpha_s.imag,
         params.tau_b, params.tau_s_res, params.aod.elevation, params.aod.azimuth]
    if ModelKind(kind).has_doppler:
        v += [params.gamma_b, params.gamma_s]
    return np.array(v, dtype=float)


def channel_from_vector(v: np.ndarray, kind: ModelKind) -> ChannelParams:
    from .geometry import Aod

    has = ModelKind(kind).has_doppler
    return ChannelParams(
        complex(v[0], v[1]), complex(v[2], v[3]), float(v[4]), float(v[5]), Aod(float(v[6]), float(v[7])),
        float(v[8]) if has else None, float(v[9]) if has else None,
    )


def channel_steps(world, kind: ModelKind, params: ChannelParams) -> np.ndarray:
    """Central-difference steps: 1e-4 of the natural scale of each parameter."""
    num = world.numerology
    ga = 1e-4 * max(abs(params.alpha_b), 1e-300)
    gs = 1e-4 * max(abs(params.alpha_s), 1e-300)
    dt = 1e-4 / (num.N * num.delta_f)
    da = 1e-4 * 1e-2
    steps = [ga, ga, gs, gs, dt, dt, da, da]
    if ModelKind(kind).has_doppler:
        dg = 1e-4 * world.gamma_range / num.M
        steps += [dg, dg]
    return np.array(steps)


def mean_derivatives(kind: ModelKind, params: ChannelParams, world) -> np.ndarray:
    """``dR/dchi`` for every real channel parameter, shape (P, N*M)."""
    ctx = world.context
    v0 = channel_vector(params, kind)
    h = channel_steps(world, kind, params)
    out = []
    for i in range(v0.size):
        e = np.zeros_like(v0)
        e[i] = h[i]
        rp = build_observation_simplified(kind, channel_from_vector(v0 + e, kind), ctx).samples
        rm = build_observation_simplified(kind, channel_from_vector(v0 - e, kind), ctx).samples
        out.append(((rp - rm) / (2 * h[i])).ravel())
    return np.array(out)


def fim_channel(kind: ModelKind, params: ChannelParams, world, sigma2: float) -> np.ndarray:
    """``(2/sigma2) sum Re{dR dR^H}`` over the real channel parameters."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if abs(params.alpha_b) == 0 or abs(params.alpha_s) == 0:
        warnings.warn("zero path gain: channel FIM is rank deficient", RuntimeWarning)
    d = mean_derivatives(kind, params, world)
    F = (2.0 / sigma2) * np.real(d.conj() @ d.T)
    return 0.5 * (F + F.T)


# --------------------------------------------------------------------------
# positional parameterisation


def positional_vector(world) -> np.ndarray:
    t = world.truth
    return np.array([*world.p0, world.clock.delta_t0, world.scenario.speed_mps, world.clock.eta,
                     t.alpha_b.real, t.alpha_b.imag, t.alpha_s.real, t.alpha_s.imag])


def heading_unit(world) -> np.ndarray:
    h = as_vec3(world.scenario.heading)
    n = np.linalg.norm(h)
    return h / n if n > 0 else h


def channel_from_positional(chi: np.ndarray, world, kind: ModelKind) -> ChannelParams:
    """Channel parameters implied by positional parameters (receiver window fixed)."""
    p0 = chi[:3]
    clock = ClockState(float(chi[3]), float(chi[5]))
    v = float(chi[4]) * heading_unit(world)
    eb = effective_params(quadratic_delay_expansion(p0, world.p_b, v, world.c), clock)
    es = effective_params(quadratic_delay_expansion(p0, world.p_s, v + world.v_earth - world.v_leo, world.c), clock)
    has = ModelKind(kind).has_doppler
    return ChannelParams(
        complex(chi[6], chi[7]), complex(chi[8], chi[9]),
        eb.tau, es.tau - world.precomp.tau_bs, aod_from_positions(p0, world.p_b),
        eb.gamma if has else None, es.gamma if has else None,
    )


def positional_steps(world) -> np.ndarray:
    num = world.numerology
    t = world.truth
    ga, gs = 1e-4 * abs(t.alpha_b), 1e-4 * abs(t.alpha_s)
    dpos = 1e-4 * world.c / (num.N * num.delta_f)
    return np.array([dpos, dpos, dpos, 1e-4 / (num.N * num.delta_f), 1e-4,
                     1e-4 * world.gamma_range / num.M, ga, ga, gs, gs])


def positional_jacobian(world, kind: ModelKind, chi: Optional[np.ndarray] = None) -> np.ndarray:
    """``J[m, n] = d chi_ch[m] / d chi_pos[n]`` (rows channel, columns positional)."""
    chi = positional_vector(world) if chi is None else np.asarray(chi, float)
    h = positional_steps(world)
    cols = []
    for n in range(chi.size):
        e = np.zeros_like(chi)
        e[n] = h[n]
        vp = channel_vector(channel_from_positional(chi + e, world, kind), kind)
        vm = channel_vector(channel_from_positional(chi - e, world, kind), kind)
        cols.append((vp - vm) / (2 * h[n]))
    J = np.array(cols).T
    if not ModelKind(kind).has_doppler:
        # Without Doppler factors the speed and CFO enter only through the
        # second-order product delta_t0 * (1 - eta) * (1 - psi); treating them
        # as unidentifiable keeps the pseudo-inverse well defined.
        J[:, 4:6] = 0.0
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("non-finite positional Jacobian")
    return J


def positional_fim(F_ch: np.ndarray, world, kind: ModelKind, chi: Optional[np.ndarray] = None) -> np.ndarray:
    J = positional_jacobian(world, kind, chi)
    F = J.T @ F_ch @ J
    return 0.5 * (F + F.T)


@dataclass
class BoundReport:
    peb: float = float("nan")
    ceb: float = float("nan")
    speed_eb: float = float("nan")
    eta_eb: float = float("nan")
    bias_pos: float = float("nan")
    bias_clock: float = float("nan")
    bias_speed: float = float("nan")
    bias_eta: float = float("nan")
    flags: list = field(default_factory=list)


def scaled_pinv(F: np.ndarray, rcond: float = 1e-12) -> tuple[np.ndarray, bool]:
    """Pseudo-inverse after symmetric Jacobi scaling; flags rank deficiency."""
    d = np.sqrt(np.clip(np.diag(F), 0, None))
    s = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)
    Fs = F * np.outer(s, s)
    w = np.linalg.eigvalsh(Fs)
    singular = w.min() <= rcond * max(w.max(), 1e-300)
    inv = np.linalg.pinv(Fs, rcond=rcond, hermitian=True)
    return inv * np.outer(s, s), bool(singular)


def crb_report(F_pos: np.ndarray) -> BoundReport:
    C, singular = scaled_pinv(F_pos)
    rep = BoundReport(
        peb=float(np.sqrt(max(np.trace(C[:3, :3]), 0.0))),
        ceb=float(np.sqrt(max(C[3, 3], 0.0))),
        speed_eb=float(np.sqrt(max(C[4, 4], 0.0))) if F_pos[4, 4] > 0 else float("nan"),
        eta_eb=float(np.sqrt(max(C[5, 5], 0.0))) if F_pos[5, 5] > 0 else float("nan"),
    )
    if singular:
        rep.flags.append("pseudo-inverse")
        if F_pos[4, 4] > 0 and F_pos[5, 5] > 0:
            warnings.warn("positional FIM is numerically singular", RuntimeWarning)
    return rep


def crb(kind: ModelKind, world, sigma2: Optional[float] = None) -> BoundReport:
    """Convenience: bounds at the world's true parameters."""
    sigma2 = world.sigma2 if sigma2 is None else sigma2
    kind = ModelKind(kind)
    chi = positional_vector(world)
    params = channel_from_positional(chi, world, kind)
    return crb_report(positional_fim(fim_channel(kind, params, world, sigma2), world, kind, chi))


# --------------------------------------------------------------------------
# mismatch bias


def _gain_profiled_residual(Y: np.ndarray, theta: np.ndarray, world, kind: ModelKind) -> np.ndarray:
    """Residual of the simplified model with both complex gains fitted in closed form."""
    ctx = world.context
    chi = _full_chi(theta, world, kind)
    p_b = channel_from_positional(chi, world, kind).with_(alpha_b=1.0, alpha_s=0.0)
    B = build_observation_simplified(kind, p_b, ctx).samples.ravel()
    S = build_observation_simplified(kind, p_b.with_(alpha_b=0.0, alpha_s=1.0), ctx).samples.ravel()
    A = np.stack([B, S], axis=1)
    coef, *_ = np.linalg.lstsq(A, Y.ravel(), rcond=None)
    r = Y.ravel() - A @ coef
    return np.concatenate([r.real, r.imag])


def _nonlinear_indices(kind: ModelKind) -> list[int]:
    return [0, 1, 2, 3] + ([4, 5] if ModelKind(kind).has_doppler else [])


def _full_chi(theta: np.ndarray, world, kind: ModelKind) -> np.ndarray:
    chi = positional_vector(world).copy()
    chi[_nonlinear_indices(kind)] = theta
    return chi


def pseudo_true(kind: ModelKind, world, Y: Optional[np.ndarray] = None, starts=()) -> tuple[np.ndarray, float, bool]:
    """Positional parameters minimising the noise-free misfit; returns (chi, cost, converged)."""
    kind = ModelKind(kind)
    if Y is None:
        Y = build_observation_generative(world).samples
    idx = _nonlinear_indices(kind)
    truth = positional_vector(world)[idx]
    scale = positional_steps(world)[idx] * 1e4
    norm = np.sqrt(np.vdot(Y, Y).real) or 1.0
    Yn = Y / norm
    best = None
    for s0 in [truth, *[np.asarray(s, float)[idx] if len(s) == 10 else np.asarray(s, float) for s in starts]]:
        if not np.all(np.isfinite(s0)):
            continue

        def fun(u):
            return _gain_profiled_residual(Yn, truth + scale * u, world, kind)

        sol = least_squares(fun, (s0 - truth) / scale, method="lm", x_scale=1.0, diff_step=1e-6,
                            xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=400)
        if best is None or sol.cost < best[1]:
            best = (truth + scale * sol.x, sol.cost, sol.success)
    theta, cost, ok = best
    return _full_chi(theta, world, kind), float(cost), bool(ok)


def mcrb_bias(kind: ModelKind, world, Y: Optional[np.ndarray] = None, estimator_start: bool = True) -> BoundReport:
    """Bias of the simplified model ``kind`` against the generative truth.

    Starts from the true parameters and, optionally, from the kind's own
    estimator run on the noise-free observation (mapped through the solvers).
    """
    kind = ModelKind(kind)
    if Y is None:
        Y = build_observation_generative(world).samples
    starts = []
    flags = []
    if estimator_start:
        from .estimation import estimate
        from .solver import SolverInputs, solve_positional

        try:
            rep = estimate(kind, Y, world.context)
            pp = solve_positional(SolverInputs.from_world(rep.params, world), kind.has_doppler)
            s = positional_vector(world).copy()
            s[:4] = [*pp.p0, pp.delta_t0]
            if kind.has_doppler:
                s[4:6] = [pp.speed, pp.eta]
            starts.append(s)
        except (RuntimeError, ValueError) as exc:
            flags.append(f"estimator-start-failed: {exc}")
    chi, _, ok = pseudo_true(kind, world, Y, starts)
    if not ok:
        flags.append("not-converged")
    truth = positional_vector(world)
    rep = BoundReport(
        bias_pos=float(np.linalg.norm(chi[:3] - truth[:3])),
        bias_clock=float(abs(chi[3] - truth[3])),
        flags=flags,
    )
    if kind.has_doppler:
        rep.bias_speed = float(abs(chi[4] - truth[4]))
        rep.bias_eta = float(abs(chi[5] - truth[5]))
    return rep
