import numpy as np
import pytest

from tnntpos.clocking import (
    ClockState,
    ambiguity_integer,
    doppler_precomp,
    effective_params,
    gamma_unambiguous_range,
    network_time,
    residual_doppler,
    sampling_origin,
    ue_time,
    unwrap_gamma_s,
    wrap_gamma_s,
)
from tnntpos.geometry import DelayExpansion, direction, quadratic_delay_expansion, satellite_state

C = 3e8


def test_clock_state_rejects_large_cfo():
    ClockState(0.0, 9.9e-5)
    with pytest.raises(ValueError):
        ClockState(0.0, 1e-4)
    with pytest.raises(ValueError):
        ClockState(0.0, -2e-4)


def test_ue_time_examples():
    assert ue_time(0.37, ClockState(0.0, 0.0)) == 0.37
    got = ue_time(1.0, ClockState(1e-9, 1e-6))
    assert got == pytest.approx(1.0 / (1 - 1e-6) + 1e-9, rel=1e-15)
    assert got == pytest.approx(1.000001000001 + 1e-9, rel=1e-13)
    drift = ue_time(1.0, ClockState(0.0, 1e-6)) - 1.0
    assert drift == pytest.approx(1.000001e-6, rel=1e-9)


@pytest.mark.parametrize("eta", [0.0, 1e-8, -3e-6, 9e-5])
def test_ue_time_network_time_round_trip(eta):
    clk = ClockState(2.5e-9, eta)
    t = np.linspace(-1e-3, 5e-3, 101)
    np.testing.assert_allclose(network_time(ue_time(t, clk), clk), t, rtol=0, atol=1e-18)


def test_effective_params_trivial_reductions():
    e = DelayExpansion(1.8e-7, 5e-9, 1e-9)
    got = effective_params(e, ClockState(0.0, 0.0))
    assert (got.gamma, got.epsilon, got.tau) == (e.psi, e.mu / 2, e.tau0_p)
    got = effective_params(DelayExpansion(1.8e-7, 0.0, 0.0), ClockState(1e-9, 1e-8))
    assert got.gamma == pytest.approx(1e-8, rel=1e-12)
    assert got.epsilon == 0.0
    assert got.tau == pytest.approx(1.8e-7 + 1e-9 * (1 - 1e-8), rel=1e-15)


def test_effective_params_match_receive_phase_expansion():
    """gamma, epsilon, tau are the coefficients of t - tau_p(t) written in UE time."""
    e = quadratic_delay_expansion([20, 50, 1.5], [0, 0, 5], [15 / 3.6, 0, 0], C)
    rng = np.random.default_rng(5)
    for _ in range(5):
        clk = ClockState(rng.uniform(-5e-6, 5e-6), rng.uniform(-5e-5, 5e-5))
        eff = effective_params(e, clk)

        def arg(tp):
            t = network_time(tp, clk)
            return t - (e.tau0_p + e.psi * t + 0.5 * e.mu * t * t)

        # arg(t') = -tau + (1 - gamma) t' - eps t'^2 exactly, so finite differences are exact.
        h = 1e-2
        c0 = arg(0.0)
        c1 = (arg(h) - arg(-h)) / (2 * h)
        c2 = (arg(h) - 2 * arg(0.0) + arg(-h)) / (2 * h * h)
        assert -c0 == pytest.approx(eff.tau, rel=1e-9)
        assert 1 - c1 == pytest.approx(eff.gamma, rel=1e-6)
        assert -c2 == pytest.approx(eff.epsilon, rel=1e-3)


def test_effective_params_reference_point():
    e = quadratic_delay_expansion([20, 50, 1.5], [0, 0, 5], [15 / 3.6, 0, 0], C)
    eff = effective_params(e, ClockState(1e-9, 1e-8))
    assert eff.gamma == pytest.approx(e.psi * (1 - 1e-8) + 1e-8 - e.mu * (1 - 1e-8) ** 2 * 1e-9, rel=1e-14)
    assert eff.gamma == pytest.approx(1.5148e-8, rel=1e-4)
    assert eff.tau == pytest.approx(e.tau0_p + 1e-9 * (1 - 1e-8) * (1 - e.psi), rel=1e-14)


def test_precomp_zenith_has_no_radial_doppler():
    pb = np.array([0.0, 0.0, 5.0])
    ps = pb + [0, 0, 600e3]
    pc = doppler_precomp(pb, ps, [7800, 0, 0], [465, 0, 0], 2e9, C)
    assert pc.psi_bs_bar == 0.0
    assert pc.fc_bar == 2e9
    assert pc.tau_bs == pytest.approx(2.0e-3)


def test_precomp_against_numerical_range_rate():
    pb = np.array([0.0, 0.0, 5.0])
    ps, _ = satellite_state(np.deg2rad(88), 0.0, 600e3, 6371e3, pb, [1, 0, 0], 7800.0)
    v_leo, v_e = np.array([7800.0, 0, 0]), np.array([465.0, 0, 0])
    pc = doppler_precomp(pb, ps, v_leo, v_e, 2e9, C)
    h = 1e-3
    rng_t = lambda t: np.linalg.norm(pb + v_e * t - (ps + v_leo * t)) / C
    assert pc.psi_bs_bar == pytest.approx((rng_t(h) - rng_t(-h)) / (2 * h), rel=1e-6)
    assert pc.fc_bar == pytest.approx(2e9 / (1 - pc.psi_bs_bar), rel=1e-15)


def test_precompensation_cancels_known_doppler():
    for psi in (0.0, 1.4e-5, -7.6e-6):
        assert residual_doppler(psi, psi) == 0.0


def test_sampling_origin_examples():
    assert sampling_origin(1.8e-7, 1.6e-7, 0.0) == 1.6e-7
    assert sampling_origin(1.8e-7, 1.6e-7, 1e-6) == pytest.approx(1.6e-7 / (1 - 1e-6), rel=1e-15)
    assert sampling_origin(1.2e-7, 1.6e-7, 1e-6) == pytest.approx(1.2e-7 / (1 - 1e-6), rel=1e-15)


def test_unambiguous_range():
    r0 = gamma_unambiguous_range(2e9, 35.7e-6, 0.0)
    assert r0 == pytest.approx(1 / (2e9 * 35.7e-6))
    assert r0 == pytest.approx(1.4006e-5, rel=1e-4)
    assert gamma_unambiguous_range(2e9, 35.7e-6, 0.5) == pytest.approx(r0 / 2)


def test_wrap_adds_integer_part_from_prior():
    r = 1.4006e-5
    assert wrap_gamma_s(1e-6, 0.0, r) == 1e-6
    assert ambiguity_integer(1e-6, 2 * r, r) == 2
    assert wrap_gamma_s(1e-6, 2 * r, r) == pytest.approx(1e-6 + 2 * r, rel=1e-15)


def test_wrap_unwrap_round_trip():
    rng = np.random.default_rng(2)
    r = 1.4e-5
    for _ in range(200):
        psi = rng.uniform(-5e-5, 5e-5)
        gamma = psi + rng.uniform(-0.49, 0.49) * r
        folded = unwrap_gamma_s(gamma, r)
        assert -r / 2 <= folded < r / 2
        assert wrap_gamma_s(folded, psi, r) == pytest.approx(gamma, abs=1e-18)
