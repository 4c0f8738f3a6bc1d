import numpy as np
import pytest
from scipy.optimize import brentq

from tnntpos.geometry import (
    Aod,
    DegenerateGeometryError,
    aod_from_positions,
    channel_gain_bs,
    channel_gain_sat,
    circular_orbit_direction,
    direction,
    quadratic_delay_expansion,
    satellite_state,
    slant_range,
    steering_matrix,
    steering_vector,
    ue_position,
    upa_layout,
    ArrayLayout,
)

C = 3e8
LAM = C / 2e9
P0 = np.array([20.0, 50.0, 1.5])
PB = np.array([0.0, 0.0, 5.0])
V15 = np.array([15 / 3.6, 0.0, 0.0])


def test_ue_position_zero_and_unit_motion():
    np.testing.assert_array_equal(ue_position(P0, np.zeros(3), 5.0), P0)
    np.testing.assert_array_equal(ue_position(np.zeros(3), [1, 0, 0], 2.0), [2, 0, 0])


def test_ue_position_table_speed_over_one_frame():
    Ts = 35.7e-6
    p = ue_position(P0, [4.1667, 0, 0], 64 * Ts)
    assert p[0] == pytest.approx(20.0 + 4.1667 * 64 * Ts, abs=1e-12)
    assert p[0] == pytest.approx(20.00952, abs=1e-5)
    assert p[1:].tolist() == [50.0, 1.5]


def test_aod_zenith_and_boresight():
    z = aod_from_positions([0, 0, 1], [0, 0, 0])
    assert z.elevation == pytest.approx(np.pi / 2) and z.azimuth == 0.0
    b = aod_from_positions([1, 0, 0], [0, 0, 0])
    assert b.elevation == 0.0 and b.azimuth == 0.0


def test_aod_reference_position():
    a = aod_from_positions(P0, PB)
    r = P0 - PB
    # Independent route: the angle between r and its horizontal projection.
    horiz = np.hypot(r[0], r[1])
    assert a.elevation == pytest.approx(-np.arctan(3.5 / horiz), rel=1e-12)
    assert a.elevation == pytest.approx(-0.06490, abs=1e-5)
    assert a.azimuth == pytest.approx(np.pi / 2 - np.arctan(20 / 50), rel=1e-12)
    assert a.azimuth == pytest.approx(1.19029, abs=1e-5)


def test_aod_coincident_positions_raise():
    with pytest.raises(DegenerateGeometryError):
        aod_from_positions(PB, PB)


@pytest.mark.parametrize("beta", [0.5, 37.0, 2500.0])
def test_aod_round_trip_along_ray(beta):
    rng = np.random.default_rng(int(beta))
    for _ in range(20):
        el = rng.uniform(-np.pi / 2 + 0.01, np.pi / 2 - 0.01)
        az = rng.uniform(-np.pi + 0.01, np.pi)
        got = aod_from_positions(PB + beta * direction(el, az), PB)
        assert got.elevation == pytest.approx(el, abs=1e-12)
        assert got.azimuth == pytest.approx(az, abs=1e-12)


def test_upa_layout_is_centred_square_half_wavelength():
    lay = upa_layout(64, LAM)
    assert lay.size == 64
    np.testing.assert_allclose(lay.element_offsets.mean(axis=0), 0.0, atol=1e-15)
    assert np.all(lay.element_offsets[:, 0] == 0.0)
    ys = np.unique(np.round(lay.element_offsets[:, 1], 12))
    assert len(ys) == 8
    np.testing.assert_allclose(np.diff(ys), LAM / 2)
    with pytest.raises(ValueError):
        upa_layout(60, LAM)


def test_steering_vector_unit_modulus_and_phase_centre():
    lay = upa_layout(16, LAM)
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = steering_vector(Aod(rng.uniform(-1.5, 1.5), rng.uniform(-3, 3)), lay)
        np.testing.assert_allclose(np.abs(a), 1.0, rtol=0, atol=1e-14)
    centre = ArrayLayout(np.zeros((1, 3)), LAM)
    assert steering_vector(Aod(0.3, 1.1), centre)[0] == 1 + 0j


def test_steering_vector_broadside_and_half_wavelength_offset():
    lay = upa_layout(16, LAM)
    np.testing.assert_allclose(steering_vector(Aod(0.0, 0.0), lay), np.ones(16), atol=1e-14)
    one = ArrayLayout(np.array([[LAM / 2, 0.0, 0.0]]), LAM)
    assert steering_vector(Aod(0.0, 0.0), one)[0] == pytest.approx(-1.0, abs=1e-14)


def test_steering_matrix_matches_vectors():
    lay = upa_layout(16, LAM)
    els = np.array([0.1, -0.4, 0.7])
    azs = np.array([0.2, 1.3, -2.0])
    A = steering_matrix(els, azs, lay)
    for i in range(3):
        np.testing.assert_allclose(A[i], steering_vector(Aod(els[i], azs[i]), lay), atol=1e-14)


def test_delay_expansion_trivial_cases():
    e = quadratic_delay_expansion(P0, PB, np.zeros(3), C)
    assert e.psi == 0.0 and e.mu == 0.0
    e = quadratic_delay_expansion([10.0, 0, 0], [0, 0, 0], [3.0, 0, 0], C)
    assert e.psi == pytest.approx(3.0 / C)
    assert e.mu == pytest.approx(0.0, abs=1e-25)


def _delay(t):
    return np.linalg.norm(P0 + V15 * t - PB) / C


def test_delay_expansion_against_numerical_derivatives():
    e = quadratic_delay_expansion(P0, PB, V15, C)
    h = 1e-2
    d1 = (_delay(h) - _delay(-h)) / (2 * h)
    d2 = (_delay(h) - 2 * _delay(0.0) + _delay(-h)) / h**2
    assert e.tau0_p == pytest.approx(_delay(0.0), rel=1e-15)
    assert e.psi == pytest.approx(d1, rel=1e-6)
    assert e.mu == pytest.approx(d2, rel=1e-4)
    assert e.tau0_p == pytest.approx(1.79884e-7, rel=1e-5)
    assert e.psi == pytest.approx(5.148e-9, rel=1e-3)


def test_delay_expansion_accuracy_over_frame():
    rng = np.random.default_rng(11)
    T = 64 * 35.7e-6
    t = np.linspace(0, T, 1000)
    for _ in range(5):
        v = rng.normal(size=3) * 30 + np.array([0, 0, 0])
        p_i = rng.normal(size=3) * 200
        e = quadratic_delay_expansion(P0, p_i, v, C)
        exact = np.linalg.norm(P0[None] + np.outer(t, v) - p_i[None], axis=1) / C
        approx = e.tau0_p + e.psi * t + 0.5 * e.mu * t**2
        assert np.max(np.abs(exact - approx) / exact) < 1e-9


def test_slant_range_zenith_is_altitude():
    assert slant_range(np.pi / 2, 600e3, 6371e3) == pytest.approx(600e3, abs=1e-6)
    pos, _ = satellite_state(np.pi / 2, 0.0, 600e3, 6371e3, [0, 0, 5], [1, 0, 0], 7800.0)
    np.testing.assert_allclose(pos, [0, 0, 600005], atol=1e-6)


@pytest.mark.parametrize("el_deg", [88.0, 60.0, 30.0, 120.0])
def test_slant_range_against_spherical_triangle(el_deg):
    R, h = 6371e3, 600e3
    el = np.deg2rad(el_deg)
    centre = np.array([0.0, 0.0, -R])
    u = direction(el, 0.0)
    d_num = brentq(lambda d: np.linalg.norm(d * u - centre) - (R + h), 1.0, 5e6, xtol=1e-9)
    assert slant_range(el, h, R) == pytest.approx(d_num, abs=1e-5)


def test_satellite_state_rejects_bad_inputs():
    with pytest.raises(ValueError):
        satellite_state(0.0, 0.0, 600e3, 6371e3, PB, [1, 0, 0], 7800.0)
    with pytest.raises(ValueError):
        satellite_state(1.0, 0.0, -1.0, 6371e3, PB, [1, 0, 0], 7800.0)


def test_orbit_direction_is_tangent_and_horizontal_at_zenith():
    pos, _ = satellite_state(np.pi / 2, 0.0, 600e3, 6371e3, PB, [1, 0, 0], 7800.0)
    od = circular_orbit_direction(pos, PB, 6371e3, [1, 0, 0])
    np.testing.assert_allclose(od, [1, 0, 0], atol=1e-12)
    pos, _ = satellite_state(np.deg2rad(50), 0.3, 600e3, 6371e3, PB, [1, 0, 0], 7800.0)
    od = circular_orbit_direction(pos, PB, 6371e3, [1, 0, 0])
    radial = pos - (PB - [0, 0, 6371e3])
    assert abs(od @ radial) < 1e-9 * np.linalg.norm(radial)
    assert np.linalg.norm(od) == pytest.approx(1.0)


def test_bs_gain_boresight_scaling_and_reference():
    g = channel_gain_bs([10, 0, 5], PB, LAM)
    assert g == pytest.approx(LAM / (4 * np.pi * 10))
    assert channel_gain_bs([20, 0, 5], PB, LAM) == pytest.approx(g / 2)
    d = np.linalg.norm(P0 - PB)
    el = np.arcsin(-3.5 / d)
    expected = LAM / (4 * np.pi * d) * np.cos(el) ** (0.57 / 2)
    assert channel_gain_bs(P0, PB, LAM, 0.57) == pytest.approx(expected, rel=1e-13)


def test_satellite_gain_free_space():
    g = channel_gain_sat([0, 0, 0], [0, 0, 600e3], LAM)
    assert g == pytest.approx(LAM / (4 * np.pi * 600e3))
    assert channel_gain_sat([0, 0, 0], [0, 0, 1200e3], LAM) == pytest.approx(g / 2)
