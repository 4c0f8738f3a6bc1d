"""Maximum-likelihood channel estimators for the four simplified models.

Every estimator follows the same pattern: project the observation onto the
BS (even) and satellite (odd) subcarriers, strip the pilots, locate each path
with low-dimensional grid searches, then polish all nonlinear parameters with
a finite-difference quasi-Newton step on the concentrated least-squares cost
(complex gains are always eliminated in closed form).

Delay grids run over window-relative delays (see
:func:`tnntpos.waveform.window_delay`).  Doppler grids are offsets around the
path's prior value: zero for the BS path and the precompensation Doppler
``psi_bs_bar`` for the satellite path, which resolves the slow-time
ambiguity of ``gamma_s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .clocking import gamma_unambiguous_range
from .geometry import Aod, steering_matrix
from .waveform import (
    AodSector,
    ChannelParams,
    Factors,
    ModelContext,
    ModelKind,
    ObservationGrid,
    build_observation_simplified,
    delay_from_window,
    delay_vector,
    fourier_apply,
    ici_vector,
    intersubcarrier_matrix,
    slow_time_vector,
)

_CHUNK = 1024


@dataclass(frozen=True)
class SearchConfig:
    delay_grid: tuple  # (lo, hi, points), window-relative seconds
    gamma_grid: tuple  # (lo, hi, points), offsets about the prior Doppler
    aod_grid: tuple  # (el_lo, el_hi, az_lo, az_hi, points per axis)
    refine_max_iters: int = 200
    refine_tol: float = 1e-15
    fd_step: float = 1e-3
    two_peak: bool = True
    exact_bs_reconstruction: bool = True
    alternations: int = 1

    def __post_init__(self):
        lo, hi, n = self.delay_grid
        glo, ghi, gn = self.gamma_grid
        elo, ehi, alo, ahi, an = self.aod_grid
        if min(n, gn, an) < 2:
            raise ValueError("every search grid needs at least two points")
        if not (lo < hi and glo < ghi and elo < ehi and alo < ahi):
            raise ValueError("grid bounds must satisfy lo < hi")
        if self.refine_max_iters < 0 or self.refine_tol < 0 or self.fd_step <= 0:
            raise ValueError("invalid refinement settings")

    @classmethod
    def default(cls, ctx: ModelContext, sector: Optional[AodSector] = None, **kw) -> "SearchConfig":
        num = ctx.numerology
        sector = sector or AodSector()
        r = gamma_unambiguous_range(num.f_c, num.Ts, ctx.precomp.psi_bs_bar)
        return cls(
            delay_grid=(0.0, 2 * num.Tcp, 4 * num.N),
            gamma_grid=(-r / 2, r / 2, 8 * num.M),
            aod_grid=(sector.el_lo, sector.el_hi, sector.az_lo, sector.az_hi, 64),
            **kw,
        )

    def delays(self) -> np.ndarray:
        return np.linspace(*self.delay_grid[:2], int(self.delay_grid[2]))

    def gammas(self) -> np.ndarray:
        lo, hi, n = self.gamma_grid
        return lo + (hi - lo) * np.arange(int(n)) / int(n)

    def angles(self) -> tuple[np.ndarray, np.ndarray]:
        elo, ehi, alo, ahi, n = self.aod_grid
        return np.linspace(elo, ehi, int(n)), np.linspace(alo, ahi, int(n))

    @property
    def delay_cell(self) -> float:
        lo, hi, n = self.delay_grid
        return (hi - lo) / (n - 1)

    @property
    def gamma_cell(self) -> float:
        lo, hi, n = self.gamma_grid
        return (hi - lo) / n

    @property
    def angle_cells(self) -> tuple[float, float]:
        elo, ehi, alo, ahi, n = self.aod_grid
        return (ehi - elo) / (n - 1), (ahi - alo) / (n - 1)


@dataclass
class EstimationReport:
    params: ChannelParams
    objective: float
    iterations: int
    peak_candidates: list = field(default_factory=list)
    kind: ModelKind = ModelKind.COMM
    flags: list = field(default_factory=list)


class RefineResult(NamedTuple):
    x: np.ndarray
    f: float
    iterations: int
    nonfinite: bool = False


# --------------------------------------------------------------------------
# generic tools


def refine(
    objective: Callable[[np.ndarray], float],
    init,
    cfg: Optional[SearchConfig] = None,
    scale=None,
    max_iters: Optional[int] = None,
    tol: Optional[float] = None,
    fd_step: Optional[float] = None,
) -> RefineResult:
    """BFGS with central-difference gradients and Armijo backtracking.

    Coordinates are measured in units of ``scale`` (one grid cell per
    coordinate), so ``fd_step`` is a fraction of a cell.  Stops after
    ``max_iters`` accepted steps or when an accepted step lowers the objective
    by less than ``tol``.  The returned objective never exceeds the initial one.
    """
    max_iters = cfg.refine_max_iters if max_iters is None and cfg else (200 if max_iters is None else max_iters)
    tol = cfg.refine_tol if tol is None and cfg else (1e-15 if tol is None else tol)
    h = cfg.fd_step if fd_step is None and cfg else (1e-3 if fd_step is None else fd_step)
    x0 = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    s = np.ones_like(x0) if scale is None else np.broadcast_to(np.asarray(scale, float), x0.shape)
    dim = x0.size

    def fs(u):
        return float(objective(x0 + s * u))

    u = np.zeros(dim)
    f = fs(u)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial point")
    nonfinite = False

    def grad(u):
        g = np.empty(dim)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = h
            g[i] = (fs(u + e) - fs(u - e)) / (2 * h)
        return g

    g = grad(u)
    Hinv = None
    steps = 0
    while steps < max_iters:
        if not np.all(np.isfinite(g)):
            nonfinite = True
            break
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            break
        d = -g * min(1.0, 0.5 / gn) if Hinv is None else -Hinv @ g
        if d @ g >= 0:
            Hinv = None
            d = -g * min(1.0, 0.5 / gn)
        t = 1.0
        accepted = False
        for _ in range(50):
            un = u + t * d
            fn = fs(un)
            if not np.isfinite(fn):
                nonfinite = True
            elif fn <= f + 1e-4 * t * (g @ d):
                accepted = True
                break
            t *= 0.5
        if not accepted or fn >= f:
            break
        gnew = grad(un)
        sv, yv = un - u, gnew - g
        decrease = f - fn
        u, f, g = un, fn, gnew
        steps += 1
        sy = float(sv @ yv)
        if sy > 0:
            if Hinv is None:
                Hinv = (sy / float(yv @ yv)) * np.eye(dim)
            rho = 1.0 / sy
            V = np.eye(dim) - rho * np.outer(sv, yv)
            Hinv = V @ Hinv @ V.T + rho * np.outer(sv, sv)
        if decrease < tol:
            break
    return RefineResult(x0 + s * u, f, steps, nonfinite)


def two_peak_candidates(correlation) -> tuple[int, int]:
    """Indices of the two highest local maxima; the single peak twice if alone."""
    c = np.asarray(correlation, dtype=float)
    if c.size < 2:
        raise ValueError("correlation needs at least two entries")
    left = np.r_[-np.inf, c[:-1]]
    right = np.r_[c[1:], -np.inf]
    idx = np.flatnonzero((c > left) & (c >= right))
    order = idx[np.lexsort((idx, -c[idx]))]
    if order.size == 1:
        return int(order[0]), int(order[0])
    return int(order[0]), int(order[1])


def separate_paths(Y, ctx: Optional[ModelContext] = None) -> tuple[np.ndarray, np.ndarray]:
    """``(F_b^H Y, F_s^H Y)``: projections on the even and odd subcarriers."""
    Y = Y.samples if isinstance(Y, ObservationGrid) else np.asarray(Y)
    spec = np.fft.fft(Y, axis=0) / np.sqrt(Y.shape[0])
    return spec[0::2], spec[1::2]


def _check_observation(Y, ctx: ModelContext) -> np.ndarray:
    Y = Y.samples if isinstance(Y, ObservationGrid) else np.asarray(Y)
    num = ctx.numerology
    if Y.shape != (num.N, num.M):
        raise ValueError(f"observation shape {Y.shape} does not match N x M = {(num.N, num.M)}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("observation contains non-finite samples")
    return Y


def _profile(U: np.ndarray, y: np.ndarray) -> tuple[float, complex]:
    """Residual energy after projecting ``y`` on ``U`` and the fitted coefficient."""
    uu = np.vdot(U, U).real
    if uu == 0:
        return float(np.vdot(y, y).real), 0j
    a = np.vdot(U, y) / uu
    r = y - a * U
    return float(np.vdot(r, r).real), a


def _delay_scan(V: np.ndarray, num, path: str, taus: np.ndarray, coherent: bool) -> np.ndarray:
    """Delay correlation over the grid, coherent or summed over symbols."""
    out = np.empty(taus.size)
    vec = V.sum(axis=1) if coherent else None
    for i in range(0, taus.size, _CHUNK):
        B = delay_vector(num, path, taus[i:i + _CHUNK])
        if coherent:
            out[i:i + _CHUNK] = np.abs(B.conj() @ vec) ** 2
        else:
            out[i:i + _CHUNK] = np.sum(np.abs(B.conj() @ V) ** 2, axis=1)
    return out


# --------------------------------------------------------------------------
# reduced-domain path models (unit gain, pilots removed)


def _sat_reduced(x, f: Factors, ctx: ModelContext) -> np.ndarray:
    num = ctx.numerology
    b = delay_vector(num, "s", x[0])
    if not f.slow_time:
        return np.outer(b, np.ones(num.M))
    gamma = ctx.precomp.psi_bs_bar + x[1]
    U = np.outer(b, slow_time_vector(num, "s", gamma, ctx.precomp))
    if f.intersubcarrier:
        U = U * intersubcarrier_matrix(num, "s", gamma)
    return U


def _bs_reduced(x, f: Factors, ctx: ModelContext) -> np.ndarray:
    num = ctx.numerology
    b = delay_vector(num, "b", x[0])
    el, az = x[-2], x[-1]
    z = ctx.precoders.projections(steering_matrix(el, az, ctx.layout))
    if not f.slow_time:
        return np.outer(b, z)
    gamma = x[1]
    U = np.outer(b, z * slow_time_vector(num, "b", gamma, ctx.precomp))
    if f.intersubcarrier:
        U = U * intersubcarrier_matrix(num, "b", gamma)
    return U


def _grid_model(path: str, Ured: np.ndarray, pilots: np.ndarray, gamma, ctx: ModelContext, exact_fb: bool = False):
    """Full-grid CCFOD model of one path from its reduced term."""
    num = ctx.numerology
    R = Ured * pilots
    G = fourier_apply(num, path, 0.0 if (path == "b" and not exact_fb) else gamma, R)
    return G * ici_vector(num, path, gamma, ctx.precomp)[:, None]


# --------------------------------------------------------------------------
# path stages


def _gamma_scan(V: np.ndarray, tau: float, offsets: np.ndarray, f: Factors, ctx: ModelContext) -> np.ndarray:
    """``|U(tau, psi + dg)^H V|^2`` for every Doppler offset of the satellite grid."""
    num = ctx.numerology
    gam = ctx.precomp.psi_bs_bar + offsets
    bV = V * delay_vector(num, "s", tau).conj()[:, None]
    C = slow_time_vector(num, "s", gam, ctx.precomp).conj()  # G x M
    if not f.intersubcarrier:
        return np.abs(C @ bV.sum(axis=0)) ** 2
    n = num.subcarriers("s")
    m = np.arange(num.M)
    out = np.empty(gam.size)
    for i in range(0, gam.size, 64):
        g = gam[i:i + 64]
        Ic = np.exp(2j * np.pi * (1 + num.g) * g[:, None, None] * np.outer(n, m)[None])
        out[i:i + 64] = np.abs(np.einsum("gnm,nm,gm->g", Ic, bV, C[i:i + 64], optimize=True)) ** 2
    return out


def _satellite_stage(V: np.ndarray, ctx: ModelContext, cfg: SearchConfig, f: Factors,
                     Yfull: Optional[np.ndarray] = None):
    """Estimate the satellite path; returns (x, alpha_hat_unit, iters, candidates)."""
    num = ctx.numerology
    psi = ctx.precomp.psi_bs_bar
    taus = cfg.delays()
    W = V * intersubcarrier_matrix(num, "s", psi).conj() if f.intersubcarrier else V
    corr = _delay_scan(W, num, "s", taus, coherent=not f.slow_time)
    cands = two_peak_candidates(corr) if cfg.two_peak else (int(np.argmax(corr)),) * 2
    pilots = ctx.pilots.rows("s")
    scale = [cfg.delay_cell] + ([cfg.gamma_cell] if f.slow_time else [])
    best = None
    for ci in dict.fromkeys(cands):
        tau = taus[ci]
        if f.slow_time:
            dg = cfg.gammas()[int(np.argmax(_gamma_scan(V, tau, cfg.gammas(), f, ctx)))]
            if f.intersubcarrier:
                comp = (intersubcarrier_matrix(num, "s", psi + dg)
                        * slow_time_vector(num, "s", psi + dg, ctx.precomp)[None, :]).conj()
                tau = taus[int(np.argmax(_delay_scan(V * comp, num, "s", taus, coherent=True)))]
            x0 = np.array([tau, dg])
        else:
            x0 = np.array([tau])
        yv = V.ravel()
        e0 = float(np.vdot(yv, yv).real) or 1.0

        def obj(x):
            return _profile(_sat_reduced(x, f, ctx).ravel(), yv)[0] / e0

        res = refine(obj, x0, cfg, scale)
        x, fval, its = res.x, res.f, res.iterations
        if Yfull is not None:
            e1 = float(np.vdot(Yfull, Yfull).real) or 1.0

            def obj_full(x):
                U = _grid_model("s", _sat_reduced(x, f, ctx), pilots, psi + x[1], ctx)
                return _profile(U.ravel(), Yfull.ravel())[0] / e1

            res = refine(obj_full, x, cfg, scale)
            x, fval, its = res.x, res.f, its + res.iterations
        if best is None or fval < best[1]:
            best = (x, fval, its)
    x, _, its = best
    if Yfull is not None:
        U = _grid_model("s", _sat_reduced(x, f, ctx), pilots, psi + x[1], ctx)
        a = _profile(U.ravel(), Yfull.ravel())[1]
    else:
        a = _profile(_sat_reduced(x, f, ctx).ravel(), V.ravel())[1]
    return x, a, its, [float(taus[c]) for c in cands]


def _bs_stage(V: np.ndarray, ctx: ModelContext, cfg: SearchConfig, f: Factors):
    num = ctx.numerology
    P = ctx.precoders.repeat_prefix
    taus = cfg.delays()
    corr = _delay_scan(V, num, "b", taus, coherent=False)
    tau = taus[int(np.argmax(corr))]
    b = delay_vector(num, "b", tau)
    h = b.conj() @ V
    x_g = []
    if f.slow_time:
        gam = cfg.gammas()
        C = slow_time_vector(num, "b", gam, ctx.precomp)[:, :P]
        gamma = gam[int(np.argmax(np.abs(C.conj() @ h[:P])))]
        comp = slow_time_vector(num, "b", gamma, ctx.precomp).conj()
        Vc = V * comp[None, :]
        if f.intersubcarrier:
            Vc = Vc * intersubcarrier_matrix(num, "b", gamma).conj()
        h = b.conj() @ Vc
        x_g = [gamma]
    els, azs = cfg.angles()
    EE, AA = np.meshgrid(els, azs, indexing="ij")
    Z = ctx.precoders.projections(steering_matrix(EE.ravel(), AA.ravel(), ctx.layout))
    score = np.abs(Z.conj() @ h) ** 2 / np.maximum(np.sum(np.abs(Z) ** 2, axis=1), 1e-300)
    k = int(np.argmax(score))
    x0 = np.array([tau, *x_g, EE.ravel()[k], AA.ravel()[k]])
    scale = [cfg.delay_cell] + ([cfg.gamma_cell] if f.slow_time else []) + list(cfg.angle_cells)
    yv = V.ravel()
    e0 = float(np.vdot(yv, yv).real) or 1.0

    def obj(x):
        return _profile(_bs_reduced(x, f, ctx).ravel(), yv)[0] / e0

    res = refine(obj, x0, cfg, scale)
    return res.x, res.iterations, scale


def _finish(kind: ModelKind, Y: np.ndarray, ctx: ModelContext, xb, ab, xs, as_, its, cands, flags):
    num = ctx.numerology
    f = Factors.of(kind)
    gb = xb[1] if f.slow_time else None
    gs = ctx.precomp.psi_bs_bar + xs[1] if f.slow_time else None
    params = ChannelParams(
        alpha_b=complex(ab / np.sqrt(ctx.power_b)),
        alpha_s=complex(as_ / np.sqrt(ctx.power_s)),
        tau_b=delay_from_window(num, xb[0], gb, ctx.tau0),
        tau_s_res=delay_from_window(num, xs[0], gs, ctx.tau0),
        aod=Aod(float(xb[-2]), float(xb[-1])),
        gamma_b=None if gb is None else float(gb),
        gamma_s=None if gs is None else float(gs),
    )
    R = Y - build_observation_simplified(kind, params, ctx).samples
    return EstimationReport(params, float(np.vdot(R, R).real), its, cands, kind, flags)


def _estimate_separated(kind: ModelKind, Y, ctx: ModelContext, cfg: Optional[SearchConfig]):
    Y = _check_observation(Y, ctx)
    cfg = cfg or SearchConfig.default(ctx)
    f = Factors.of(kind)
    Yb, Ys = separate_paths(Y)
    Vb = Yb * ctx.pilots.rows("b").conj()
    Vs = Ys * ctx.pilots.rows("s").conj()
    xs, as_, its_s, cands = _satellite_stage(Vs, ctx, cfg, f)
    xb, its_b, _ = _bs_stage(Vb, ctx, cfg, f)
    ab = _profile(_bs_reduced(xb, f, ctx).ravel(), Vb.ravel())[1]
    return _finish(kind, Y, ctx, xb, ab, xs, as_, its_s + its_b, cands, [])


def _check_prefix(ctx: ModelContext, P: Optional[int]):
    if P is not None and P != ctx.precoders.repeat_prefix:
        raise ValueError(f"P={P} is inconsistent with the precoder schedule (P={ctx.precoders.repeat_prefix})")
    if P is not None and P < 1:
        raise ValueError("P must be positive")


def estimate_comm(Y, ctx: ModelContext, cfg: Optional[SearchConfig] = None) -> EstimationReport:
    """Frame-constant phase model: delays and AoD only."""
    return _estimate_separated(ModelKind.COMM, Y, ctx, cfg)


def estimate_slowd(Y, ctx: ModelContext, cfg: Optional[SearchConfig] = None, P: Optional[int] = None) -> EstimationReport:
    """Slow-time Doppler model; ``gamma_b`` comes from the ``P`` fixed-beam symbols."""
    _check_prefix(ctx, P)
    return _estimate_separated(ModelKind.SLOWD, Y, ctx, cfg)


def estimate_ccfodnoici(Y, ctx: ModelContext, cfg: Optional[SearchConfig] = None, P: Optional[int] = None) -> EstimationReport:
    """Adds intersubcarrier Doppler compensation to the slow-time model."""
    _check_prefix(ctx, P)
    return _estimate_separated(ModelKind.CCFODNOICI, Y, ctx, cfg)


def reconstruct_bs(params_x, ab: complex, ctx: ModelContext, exact: bool) -> np.ndarray:
    """Unit-power BS contribution on the full grid from reduced-domain estimates."""
    f = Factors.of(ModelKind.CCFOD)
    Ured = _bs_reduced(params_x, f, ctx)
    return ab * _grid_model("b", Ured, ctx.pilots.rows("b"), params_x[1], ctx, exact_fb=exact)


def estimate_ccfod(Y, ctx: ModelContext, cfg: Optional[SearchConfig] = None, P: Optional[int] = None,
                   subtract_bs: bool = True) -> EstimationReport:
    """Full CCFOD estimator: BS path first, subtract it, then the satellite path.

    The BS stage starts from the intersubcarrier-compensated reduced-domain
    estimate and is then refined against the full grid with ICI.  The
    satellite stage runs on ``Y`` minus the reconstructed BS term.

    With ``cfg.exact_bs_reconstruction`` the BS full-grid fit and its
    reconstruction keep the ``1 - gamma_b`` scaling of the BS Fourier matrix
    instead of the plain IDFT.  The BS path is tens of dB stronger than the
    satellite path, so the IDFT residual alone can bury the satellite once
    the CFO reaches about 1e-6.  Set it to ``False`` for the textbook model.
    """
    _check_prefix(ctx, P)
    Y = _check_observation(Y, ctx)
    cfg = cfg or SearchConfig.default(ctx)
    f = Factors.of(ModelKind.CCFOD)
    Yb, _ = separate_paths(Y)
    Vb = Yb * ctx.pilots.rows("b").conj()
    xb, its_b, scale = _bs_stage(Vb, ctx, cfg, f)
    pil_b = ctx.pilots.rows("b")
    exact = cfg.exact_bs_reconstruction
    e0 = float(np.vdot(Y, Y).real) or 1.0

    def obj(x):
        U = _grid_model("b", _bs_reduced(x, f, ctx), pil_b, x[1], ctx, exact)
        return _profile(U.ravel(), Y.ravel())[0] / e0

    res = refine(obj, xb, cfg, scale)
    xb = res.x
    U = _grid_model("b", _bs_reduced(xb, f, ctx), pil_b, xb[1], ctx, exact)
    ab = _profile(U.ravel(), Y.ravel())[1]
    flags = []
    if subtract_bs:
        Yr = Y - reconstruct_bs(xb, ab, ctx, exact)
    else:
        Yr = Y
        flags.append("bs-not-subtracted")
    _, Ys = separate_paths(Yr)
    Vs = Ys * ctx.pilots.rows("s").conj()
    xs, as_, its_s, cands = _satellite_stage(Vs, ctx, cfg, f, Yfull=Yr)
    its = its_b + res.iterations + its_s
    pil_s = ctx.pilots.rows("s")
    psi = ctx.precomp.psi_bs_bar
    scale_s = [cfg.delay_cell, cfg.gamma_cell]
    for _ in range(cfg.alternations if subtract_bs else 0):
        # Refit each path with the other one's current reconstruction removed.
        S = as_ * _grid_model("s", _sat_reduced(xs, f, ctx), pil_s, psi + xs[1], ctx)
        Yb_only = Y - S
        eb = float(np.vdot(Yb_only, Yb_only).real) or 1.0

        def obj_b(x):
            U = _grid_model("b", _bs_reduced(x, f, ctx), pil_b, x[1], ctx, exact)
            return _profile(U.ravel(), Yb_only.ravel())[0] / eb

        rb = refine(obj_b, xb, cfg, scale)
        xb = rb.x
        U = _grid_model("b", _bs_reduced(xb, f, ctx), pil_b, xb[1], ctx, exact)
        ab = _profile(U.ravel(), Yb_only.ravel())[1]
        Yr = Y - reconstruct_bs(xb, ab, ctx, exact)
        er = float(np.vdot(Yr, Yr).real) or 1.0

        def obj_s(x):
            U = _grid_model("s", _sat_reduced(x, f, ctx), pil_s, psi + x[1], ctx)
            return _profile(U.ravel(), Yr.ravel())[0] / er

        rs = refine(obj_s, xs, cfg, scale_s)
        xs = rs.x
        U = _grid_model("s", _sat_reduced(xs, f, ctx), pil_s, psi + xs[1], ctx)
        as_ = _profile(U.ravel(), Yr.ravel())[1]
        its += rb.iterations + rs.iterations
    return _finish(ModelKind.CCFOD, Y, ctx, xb, ab, xs, as_, its, cands, flags)


ESTIMATORS = {
    ModelKind.COMM: estimate_comm,
    ModelKind.SLOWD: estimate_slowd,
    ModelKind.CCFODNOICI: estimate_ccfodnoici,
    ModelKind.CCFOD: estimate_ccfod,
}


def estimate(kind, Y, ctx: ModelContext, cfg: Optional[SearchConfig] = None) -> EstimationReport:
    kind = ModelKind(kind)
    if kind not in ESTIMATORS:
        raise ValueError(f"no estimator for {kind.value}")
    return ESTIMATORS[kind](Y, ctx, cfg)
