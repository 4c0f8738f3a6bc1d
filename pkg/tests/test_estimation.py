from dataclasses import replace

import numpy as np
import pytest

from tnntpos.estimation import (
    SearchConfig,
    estimate,
    estimate_ccfod,
    estimate_slowd,
    refine,
    separate_paths,
    two_peak_candidates,
)
from tnntpos.geometry import Aod
from tnntpos.scenario import Scenario, build_world
from tnntpos.waveform import (
    SIMPLIFIED_KINDS,
    ModelKind,
    add_noise,
    build_observation_generative,
    build_observation_simplified,
    fourier_matrix,
)


def test_refine_quadratic_bowl_with_badly_scaled_axes():
    centre = np.array([3e-9, -2e-7, 0.4])
    scale = np.array([1e-10, 1e-8, 1e-2])
    A = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]])

    def f(x):
        u = (x - centre) / scale
        return float(u @ A @ u)

    start = centre + scale * np.array([4.0, -3.0, 5.0])
    res = refine(f, start, scale=scale, tol=0.0, max_iters=100)
    np.testing.assert_allclose((res.x - centre) / scale, 0.0, atol=1e-5)
    assert res.f <= f(start)
    assert not res.nonfinite


def test_refine_never_increases_objective():
    rng = np.random.default_rng(0)
    for _ in range(10):
        c = rng.normal(size=2)
        f = lambda x: float(np.sum(np.sin(3 * (x - c)) ** 2) + 0.1 * np.sum((x - c) ** 2))
        x0 = rng.normal(size=2) * 2
        assert refine(f, x0).f <= f(x0)


def test_refine_rejects_nonfinite_start():
    with pytest.raises(ValueError):
        refine(lambda x: float("nan"), [0.0])


def test_two_peak_tie_rules():
    assert two_peak_candidates([0.0, 1.0, 0.5, 0.2]) == (1, 1)
    assert two_peak_candidates([0.0, 2.0, 0.0, 2.0, 0.0]) == (1, 3)
    assert two_peak_candidates([0.0, 1.0, 0.0, 3.0, 0.0]) == (3, 1)
    assert two_peak_candidates([5.0, 1.0, 0.0, 3.0, 0.0]) == (0, 3)
    with pytest.raises(ValueError):
        two_peak_candidates([1.0])


def test_separate_paths_is_projection_on_each_comb(small_world):
    w = small_world
    rng = np.random.default_rng(4)
    Y = rng.normal(size=(64, 8)) + 1j * rng.normal(size=(64, 8))
    Yb, Ys = separate_paths(Y)
    num = w.numerology
    np.testing.assert_allclose(Yb, fourier_matrix(num, "b").conj().T @ Y, atol=1e-12)
    np.testing.assert_allclose(Ys, fourier_matrix(num, "s").conj().T @ Y, atol=1e-12)


def test_search_config_validation(small_world):
    cfg = SearchConfig.default(small_world.context)
    assert cfg.delays().size == 4 * 64
    assert cfg.gammas().size == 8 * 8
    assert cfg.angles()[0].size == 64
    with pytest.raises(ValueError):
        replace(cfg, delay_grid=(1.0, 0.0, 10))
    with pytest.raises(ValueError):
        replace(cfg, gamma_grid=(0.0, 1.0, 1))


def _on_grid_truth(world, cfg):
    """Truth moved onto the coarse grid points nearest the actual values."""
    t = world.truth
    num, tau0 = world.numerology, world.tau0
    from tnntpos.waveform import delay_from_window, window_delay

    def snap(x, grid):
        return float(grid[np.argmin(np.abs(grid - x))])

    d = cfg.delays()
    psi = world.precomp.psi_bs_bar
    gb = snap(t.gamma_b, cfg.gammas())
    gs = psi + snap(t.gamma_s - psi, cfg.gammas())
    tb = delay_from_window(num, snap(window_delay(num, t.tau_b, gb, tau0), d), gb, tau0)
    ts = delay_from_window(num, snap(window_delay(num, t.tau_s_res, gs, tau0), d), gs, tau0)
    els, azs = cfg.angles()
    aod = Aod(snap(t.aod.elevation, els), snap(t.aod.azimuth, azs))
    return t.with_(tau_b=tb, tau_s_res=ts, gamma_b=gb, gamma_s=gs, aod=aod)


@pytest.mark.parametrize("kind", SIMPLIFIED_KINDS)
def test_matched_on_grid_recovery(small_world, kind):
    w = small_world
    cfg = replace(SearchConfig.default(w.context), exact_bs_reconstruction=False)
    truth = _on_grid_truth(w, cfg)
    if not kind.has_doppler:
        truth = truth.with_(gamma_b=None, gamma_s=None)
    Y = build_observation_simplified(kind, truth, w.context)
    rep = estimate(kind, Y, w.context, cfg)
    p = rep.params
    T0, N = w.numerology.T0, w.numerology.N
    assert abs(p.tau_b - truth.tau_b) < 1e-6 * T0 / N
    assert abs(p.tau_s_res - truth.tau_s_res) < 1e-6 * T0 / N
    assert abs(p.aod.elevation - truth.aod.elevation) < 1e-8
    assert abs(p.aod.azimuth - truth.aod.azimuth) < 1e-8
    if kind.has_doppler:
        r = w.gamma_range
        assert abs(p.gamma_b - truth.gamma_b) < 1e-6 * r / w.numerology.M
        assert abs(p.gamma_s - truth.gamma_s) < 1e-6 * r / w.numerology.M
    np.testing.assert_allclose(p.alpha_b, truth.alpha_b, rtol=1e-6)
    np.testing.assert_allclose(p.alpha_s, truth.alpha_s, rtol=1e-6)
    assert rep.objective < 1e-10 * np.linalg.norm(Y.samples) ** 2


def test_gamma_s_beyond_unambiguous_range_is_unwrapped():
    w = build_world(Scenario(num_subcarriers=64, num_symbols=8, sat_elevation_deg=50.0))
    assert abs(w.truth.gamma_s) > w.gamma_range
    cfg = SearchConfig.default(w.context)
    Y = build_observation_simplified(ModelKind.SLOWD, w.truth, w.context)
    p = estimate_slowd(Y, w.context, cfg).params
    assert abs(p.gamma_s - w.truth.gamma_s) < cfg.gamma_cell


def test_residual_ordering_on_generative_data():
    from tnntpos.harness import DESK_PROFILE

    w = build_world(Scenario(**DESK_PROFILE).with_(sat_elevation_deg=60.0))
    Y = build_observation_generative(w).samples
    obj = [estimate(k, Y, w.context).objective for k in SIMPLIFIED_KINDS]
    comm, slowd, noici, ccfod = obj
    assert ccfod <= noici <= slowd <= comm


def test_second_peak_changes_satellite_delay_under_leakage():
    w = build_world(Scenario(num_subcarriers=64, num_symbols=8, eta=1e-6, sat_elevation_deg=90.0))
    cfg = SearchConfig.default(w.context)
    one = replace(cfg, two_peak=False)
    Y0 = build_observation_generative(w)
    changed = []
    for seed in range(3):
        Y = add_noise(Y0, w.sigma2, seed)
        a = estimate(ModelKind.CCFODNOICI, Y, w.context, cfg).params.tau_s_res
        b = estimate(ModelKind.CCFODNOICI, Y, w.context, one).params.tau_s_res
        changed.append(a != b)
    assert any(changed)


def test_bs_subtraction_flag_and_prefix_check(small_world):
    w = small_world
    Y = build_observation_simplified(ModelKind.CCFOD, w.truth, w.context)
    rep = estimate_ccfod(Y, w.context, subtract_bs=False)
    assert "bs-not-subtracted" in rep.flags
    with pytest.raises(ValueError):
        estimate_ccfod(Y, w.context, P=w.precoders.repeat_prefix + 1)


def test_shape_and_finiteness_checks(small_world):
    with pytest.raises(ValueError):
        estimate(ModelKind.COMM, np.zeros((32, 8), complex), small_world.context)
    Y = np.full((64, 8), np.nan, complex)
    with pytest.raises(ValueError):
        estimate(ModelKind.COMM, Y, small_world.context)
    with pytest.raises(ValueError):
        estimate(ModelKind.GENERATIVE, np.zeros((64, 8), complex), small_world.context)
