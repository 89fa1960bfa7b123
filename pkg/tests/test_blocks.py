import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from resolute.blocks import (
    DecayFactors,
    alphas_from_decay_times,
    analytic_envelope,
    block_probabilities,
    combine_channels,
    noise_rate_variances,
    propagate_block,
    ramsey_envelope,
)
from resolute.core import BLOCKS, BlockSpec, MiddlePhase, NoiseParams, ValidationError
from resolute.phase import Channel

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def rot(axis, theta):
    return expm(-0.5j * theta * axis)


def evolve(rho, u):
    return u @ rho @ u.conj().T


def density_matrix_p0(block, phi1, phi2, d_sense, d_store, contrast):
    """Independent oracle: explicit 2x2 state, unitaries and decoherence channels."""
    middle = SX if block.middle_phase is MiddlePhase.X else SY
    rho = np.array([[1, 0], [0, 0]], dtype=complex)
    rho = evolve(rho, rot(SX, math.pi / 2))
    rho = evolve(rho, rot(SZ, phi1))
    rho[0, 1] *= d_sense  # dephasing while sensing
    rho[1, 0] *= d_sense
    rho = evolve(rho, rot(middle, math.pi / 2))
    # storage: erase coherences, relax the population towards the mixed state
    pz = (rho[0, 0] - rho[1, 1]).real * d_store
    rho = np.diag([0.5 * (1 + pz), 0.5 * (1 - pz)]).astype(complex)
    rho = evolve(rho, rot(middle, math.pi / 2))
    rho = evolve(rho, rot(SZ, phi2))
    rho = evolve(rho, rot(SX, block.readout_sign * math.pi / 2))
    z = (rho[0, 0] - rho[1, 1]).real
    return 0.5 * (1 + contrast * z)


def test_matches_density_matrix_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        phi1, phi2 = rng.uniform(-10, 10, 2)
        d = DecayFactors(rng.uniform(0.05, 1), rng.uniform(0.05, 1))
        c = rng.uniform(0.05, 1)
        for block in BLOCKS:
            expected = density_matrix_p0(block, phi1, phi2, d.d_sense, d.d_store, c)
            assert abs(propagate_block(block, phi1, phi2, d, c) - expected) <= 1e-12


def test_block_examples():
    d = DecayFactors()
    assert propagate_block(BlockSpec(MiddlePhase.X, 1), 0.0, 0.0, d) == 1.0
    for phi2 in (0.0, 0.7, 2.0):
        assert propagate_block(BlockSpec(MiddlePhase.Y, 1), 0.0, phi2, d) == 0.5


def test_readout_sign_flips_signed_term():
    d = DecayFactors(0.8, 0.9)
    for mid in MiddlePhase:
        p = propagate_block(BlockSpec(mid, 1), 0.3, 1.1, d, 0.7)
        m = propagate_block(BlockSpec(mid, -1), 0.3, 1.1, d, 0.7)
        assert p + m == pytest.approx(1.0, abs=1e-15)


def test_combine_examples():
    d = DecayFactors()
    p = block_probabilities(0.4, 0.4, d)
    s_plus, s_minus = combine_channels(*p)
    assert s_minus == pytest.approx(1.0, abs=1e-15)
    p = block_probabilities(math.pi / 2, math.pi / 2, d)
    s_plus, s_minus = combine_channels(*p)
    assert s_plus == pytest.approx(-1.0, abs=1e-15)
    assert s_minus == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.01, 1), st.floats(0.01, 1))
def test_combine_random(phi1, phi2, d_store, c):
    d = DecayFactors(1.0, d_store)
    s_plus, s_minus = combine_channels(*block_probabilities(phi1, phi2, d, c))
    assert s_plus == pytest.approx(c * d_store * math.cos(phi1 + phi2), abs=1e-13)
    assert s_minus == pytest.approx(c * d_store * math.cos(phi1 - phi2), abs=1e-13)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.001, 1), st.floats(0.001, 1),
       st.floats(0.001, 1))
def test_probabilities_in_unit_interval(phi1, phi2, ds, dt, c):
    p = block_probabilities(phi1, phi2, DecayFactors(ds, dt), c)
    assert np.all((p >= 0) & (p <= 1))


def test_decay_factors():
    d = DecayFactors.from_times(5e-6, 100e-6, 5.1e-6, 1000e-6)
    assert d.total == pytest.approx(math.exp(-5 / 5.1 - 0.1), rel=1e-15)
    with pytest.raises(ValidationError):
        DecayFactors(0.0, 1.0)


def test_envelope_at_zero():
    noise = NoiseParams(1e-12, 2e-12)
    assert analytic_envelope(Channel.SUM, 0.0, noise) == 1.0
    assert analytic_envelope(Channel.DIFF, 0.0, noise) == 1.0


def test_diff_envelope_alpha_from_decay_time():
    # exp(-tau^2 / 4 alpha) = 1/e at tau = 5.1 us gives alpha = 5.1^2 / 4 us^2
    alpha = (5.1e-6) ** 2 / 4
    assert alpha * 1e12 == pytest.approx(6.5025, rel=1e-12)
    noise = NoiseParams(1.0, alpha)
    assert analytic_envelope(Channel.DIFF, 5.1e-6, noise) == pytest.approx(math.exp(-1), rel=1e-12)


def test_ramsey_envelope_gaussian_average():
    rng = np.random.default_rng(0)
    alpha, gamma, tau = 2.0e-13, 1.0, 0.4e-6
    db = rng.normal(0.0, math.sqrt(1 / (2 * alpha)), 1_000_000)
    mc = np.mean(np.cos(gamma * db * tau))
    assert mc == pytest.approx(ramsey_envelope(tau, alpha, gamma), rel=5e-3)


def test_noise_split_reproduces_channel_envelopes():
    alpha_c, alpha_f = alphas_from_decay_times(0.38e-6, 5.1e-6)
    noise = NoiseParams(alpha_c, alpha_f)
    var_c, var_f = noise_rate_variances(noise)
    rng = np.random.default_rng(1)
    n = 1_000_000
    for tau in (0.2e-6, 0.5e-6, 3e-6):
        corr = rng.normal(0, math.sqrt(var_c), n)
        f1, f2 = rng.normal(0, math.sqrt(var_f), (2, n))
        phi1 = (corr + f1) * tau / 2
        phi2 = (corr + f2) * tau / 2
        for channel, values in ((Channel.SUM, phi1 + phi2), (Channel.DIFF, phi1 - phi2)):
            expected = analytic_envelope(channel, tau, noise)
            assert np.mean(np.cos(values)) == pytest.approx(expected, abs=5e-3)


def test_alphas_from_decay_times_hits_both_times():
    alpha_c, alpha_f = alphas_from_decay_times(0.38e-6, 5.1e-6)
    noise = NoiseParams(alpha_c, alpha_f)
    single = math.exp(-(0.38e-6) ** 2 * (1 / alpha_c + 1 / (4 * alpha_f)))
    assert single == pytest.approx(math.exp(-1), rel=1e-12)
    assert analytic_envelope(Channel.DIFF, 5.1e-6, noise) == pytest.approx(math.exp(-1), rel=1e-12)


def test_noise_split_rejects_inconsistent_alphas():
    with pytest.raises(ValidationError):
        noise_rate_variances(NoiseParams(10.0, 1.0))
