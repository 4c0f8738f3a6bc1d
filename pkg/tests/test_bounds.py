import numpy as np
import pytest

from tnntpos.bounds import (
    channel_from_positional,
    channel_from_vector,
    channel_vector,
    crb,
    fim_channel,
    mcrb_bias,
    positional_jacobian,
    positional_vector,
    scaled_pinv,
)
from tnntpos.waveform import SIMPLIFIED_KINDS, ModelKind, build_observation_simplified


def _stencil_jacobian(kind, world):
    """Five-point derivatives of the flattened mean with hand-picked steps."""
    p = world.truth if kind.has_doppler else world.truth.with_(gamma_b=None, gamma_s=None)
    v0 = channel_vector(p, kind)
    num = world.numerology
    steps = [abs(p.alpha_b) * 1e-3] * 2 + [abs(p.alpha_s) * 1e-3] * 2 + [2e-3 / (num.N * num.delta_f)] * 2
    steps += [1e-4, 1e-4]
    if kind.has_doppler:
        steps += [1e-3 * world.gamma_range / num.M] * 2
    cols = []
    for i, h in enumerate(steps):
        def f(t):
            v = v0.copy()
            v[i] += t
            return build_observation_simplified(kind, channel_from_vector(v, kind), world.context).samples.ravel()
        cols.append((-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h))
    return np.array(cols)


@pytest.mark.parametrize("kind", SIMPLIFIED_KINDS)
def test_fim_matches_stencil_derivatives(small_world, kind):
    w = small_world
    p = w.truth if kind.has_doppler else w.truth.with_(gamma_b=None, gamma_s=None)
    F = fim_channel(kind, p, w, w.sigma2)
    D = _stencil_jacobian(kind, w)
    G = (2 / w.sigma2) * np.real(D.conj() @ D.T)
    d = np.sqrt(np.diag(G))
    np.testing.assert_allclose(F / np.outer(d, d), G / np.outer(d, d), atol=1e-6)


@pytest.mark.parametrize("kind", SIMPLIFIED_KINDS)
def test_fim_symmetric_psd(small_world, kind):
    w = small_world
    p = w.truth if kind.has_doppler else w.truth.with_(gamma_b=None, gamma_s=None)
    F = fim_channel(kind, p, w, w.sigma2)
    np.testing.assert_array_equal(F, F.T)
    d = np.sqrt(np.diag(F))
    assert np.linalg.eigvalsh(F / np.outer(d, d)).min() > -1e-10


def test_fim_requires_positive_noise(small_world):
    with pytest.raises(ValueError):
        fim_channel(ModelKind.CCFOD, small_world.truth, small_world, 0.0)


def test_peb_proportional_to_sigma(small_world):
    a = crb(ModelKind.CCFOD, small_world, small_world.sigma2)
    b = crb(ModelKind.CCFOD, small_world, small_world.sigma2 * 100)
    # The ratio is exact in exact arithmetic; the slack covers roundoff in
    # inverting a FIM whose scaled condition number is near 1e8.
    assert b.peb / a.peb == pytest.approx(10.0, rel=1e-7)
    assert b.ceb / a.ceb == pytest.approx(10.0, rel=1e-7)


def test_positional_chain_reproduces_truth(small_world):
    w = small_world
    for kind in SIMPLIFIED_KINDS:
        ch = channel_from_positional(positional_vector(w), w, kind)
        assert ch.tau_b == w.truth.tau_b and ch.tau_s_res == w.truth.tau_s_res
        assert ch.aod == w.truth.aod
        if kind.has_doppler:
            assert ch.gamma_b == w.truth.gamma_b and ch.gamma_s == w.truth.gamma_s


def test_positional_jacobian_delay_rows(small_world):
    """d tau_b / d p0 is the unit vector from the BS over c."""
    w = small_world
    J = positional_jacobian(w, ModelKind.CCFOD)
    u = (w.p0 - w.p_b) / np.linalg.norm(w.p0 - w.p_b)
    np.testing.assert_allclose(J[4, :3], u / w.c, rtol=1e-6)
    assert J[4, 3] == pytest.approx((1 - w.clock.eta) * (1 - w.exp_b.psi), rel=1e-6)
    comm = positional_jacobian(w, ModelKind.COMM)
    assert np.all(comm[:, 4:6] == 0.0)


def test_scaled_pinv_inverts_well_conditioned_matrix():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 5))
    S = np.diag([1e12, 1, 1e-6, 3, 1e8])
    B = A @ A.T + np.eye(5)
    C, singular = scaled_pinv(S @ B @ S)
    assert not singular
    np.testing.assert_allclose(S @ C @ S, np.linalg.inv(B), rtol=1e-9, atol=1e-12)
    _, flagged = scaled_pinv(np.outer([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]))
    assert flagged


@pytest.mark.parametrize("kind", SIMPLIFIED_KINDS)
def test_mcrb_bias_vanishes_on_own_model(small_world, kind):
    w = small_world
    p = w.truth if kind.has_doppler else w.truth.with_(gamma_b=None, gamma_s=None)
    Y = build_observation_simplified(kind, p, w.context).samples
    b = mcrb_bias(kind, w, Y, estimator_start=False)
    assert b.bias_pos < 1e-6
    assert b.bias_clock < 1e-15
