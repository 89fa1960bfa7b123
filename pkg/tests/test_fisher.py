import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from resolute.core import BLOCKS, ResoluteWarning, SensorParams, SequenceParams, ToneSignal, ValidationError, effective_period
from resolute.fisher import (
    COMPARISON_SENSOR,
    block_probability,
    compare_protocols,
    fisher_approx,
    fisher_exact_sequence,
    fisher_experiment,
    fisher_single,
    optimize_sequence,
    phi_grid,
    rayleigh_feasible,
    resolute_block_terms,
)

TWO_PI = 2 * math.pi
SENSOR = SensorParams(T1=1000e-6, T2_star=0.38e-6, T2_hahn=4.3e-6, T2_p=5.1e-6, contrast=0.8)

# 8 A^2 tau^2 T~^2 exp(-2 tau/T2p - t_corr/T1) at tau = 5 us, t_corr = 100 us, T2p = 5.1 us,
# T1 = 1000 us, A = 1 rad/s with cos^2 = sinc^2 = 1; evaluated in 30-digit arithmetic
APPROX_PINNED = 2.6760268745159152e-19


def test_zero_amplitude_block():
    seq = SequenceParams(5e-6, 100e-6)
    d = math.exp(-5 / 5.1 - 0.1)
    p, dp = block_probability(BLOCKS[0], TWO_PI * 50e3, ToneSignal(0.0, TWO_PI * 50e3, 0.3), seq, SENSOR)
    assert p == pytest.approx(0.5 * (1 + 0.8 * d), rel=1e-15)
    assert dp == 0.0


def test_decay_factor_in_block_probability():
    # at phases 0 the X+ block reads 1/2 (1 + C exp(-tau/T2p - t_corr/T1))
    seq = SequenceParams(3e-6, 250e-6)
    p, _ = block_probability(BLOCKS[0], 0.0, ToneSignal(1e4, 0.0, 0.0), seq, SENSOR)
    assert p == pytest.approx(0.5 * (1 + 0.8 * math.exp(-3 / 5.1 - 0.25)), rel=1e-14)


def test_derivative_matches_finite_difference():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        omega = TWO_PI * 10 ** rng.uniform(3, 5.5)
        seq = SequenceParams(rng.uniform(1e-6, 10e-6), rng.uniform(20e-6, 900e-6))
        tone = ToneSignal(10 ** rng.uniform(4, 6), omega, rng.uniform(0, TWO_PI))
        h = 1e-6 * omega
        for block in BLOCKS:
            _, dp = block_probability(block, omega, tone, seq, SENSOR)
            up, _ = block_probability(block, omega + h, tone, seq, SENSOR)
            dn, _ = block_probability(block, omega - h, tone, seq, SENSOR)
            fd = (up - dn) / (2 * h)
            scale = max(abs(dp), 1e-3 * tone.amplitude * seq.tau * effective_period(seq))
            worst = max(worst, abs(fd - dp) / scale)
    assert worst <= 1e-6


def test_fisher_single_examples():
    assert fisher_single(0.3, 0.0) == 0.0
    assert fisher_single(0.5, 2.0) == pytest.approx(16.0)
    with pytest.raises(ValidationError, match="degenerate outcome"):
        fisher_single(1.0, 0.1)
    assert fisher_single(1.0, 0.0) == 0.0


@given(st.floats(-10, 10), st.floats(-1e3, 1e3), st.floats(0.01, 0.99))
def test_fisher_single_sine_readout_shape(phase, dphase, d):
    # P0 = 1/2 (1 + d sin Phi) gives d^2 cos^2 Phi Phi'^2 / (1 - d^2 sin^2 Phi)
    p0 = 0.5 * (1 + d * math.sin(phase))
    dp0 = 0.5 * d * math.cos(phase) * dphase
    expected = d**2 * math.cos(phase) ** 2 * dphase**2 / (1 - d**2 * math.sin(phase) ** 2)
    assert fisher_single(p0, dp0) == pytest.approx(expected, rel=1e-9, abs=1e-300)


def test_exact_zero_amplitude():
    seq = SequenceParams(5e-6, 100e-6)
    assert fisher_exact_sequence(TWO_PI * 50e3, ToneSignal(0.0, 1.0), seq, SENSOR) == 0.0


def test_exact_is_phase_mean_of_block_sum():
    seq = SequenceParams(5e-6, 100e-6)
    omega = TWO_PI * 37e3
    tone = ToneSignal(3e5, omega)
    total = 0.0
    for phi in phi_grid(64):
        t = tone.with_phi(phi)
        total += sum(fisher_single(*block_probability(b, omega, t, seq, SENSOR)) for b in BLOCKS)
    assert fisher_exact_sequence(omega, tone, seq, SENSOR) == pytest.approx(total / 64, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e2, 1e7), st.floats(0.1e-6, 20e-6), st.floats(20e-6, 999e-6), st.floats(0, 1e7))
def test_fisher_nonnegative(omega, tau, tc, amp):
    p, dp = resolute_block_terms(amp, omega, phi_grid(16), tau, tc, SENSOR)
    assert np.all(fisher_single(p, dp) >= 0)


def test_approx_node_and_pinned_value():
    seq = SequenceParams(5e-6, 100e-6)
    sensor = SensorParams(T1=1000e-6, T2_p=5.1e-6)
    omega = TWO_PI * 20e3
    tt = effective_period(seq)
    phi = math.pi / 2 - omega * tt - omega * seq.tau / 4
    assert fisher_approx(omega, ToneSignal(1.0, omega), seq, sensor, phi) == pytest.approx(0.0, abs=1e-35)
    pinned = fisher_approx(0.0, ToneSignal(1.0, 0.0), seq, sensor, 0.0)
    assert pinned == pytest.approx(APPROX_PINNED, rel=1e-14)
    # phase-averaged form carries the 1/2 of <cos^2>
    assert fisher_approx(0.0, ToneSignal(1.0, 0.0), seq, sensor) == pytest.approx(APPROX_PINNED / 2, rel=1e-14)


def test_approx_tau_envelope_peaks_at_t2p():
    sensor = SensorParams(T1=1000e-6, T2_p=5.1e-6)

    def neg(tau):
        seq = SequenceParams(tau, 100e-6)
        return -fisher_approx(0.0, ToneSignal(1.0, 0.0), seq, sensor, 0.0) / effective_period(seq) ** 2

    res = optimize.minimize_scalar(neg, bounds=(1e-6, 20e-6), method="bounded", options={"xatol": 1e-13})
    assert res.x == pytest.approx(5.1e-6, rel=1e-5)


def test_experiment_linearity():
    seq = SequenceParams(5e-6, 100e-6)
    omega = TWO_PI * 50e3
    tone = ToneSignal(1e6, omega)
    one = fisher_experiment(omega, tone, seq, SENSOR, 1)
    assert one.i_total == fisher_exact_sequence(omega, tone, seq, SENSOR)
    many = fisher_experiment(omega, tone, seq, SENSOR, 500)
    assert many.i_total == 500 * one.i_total
    assert fisher_experiment(omega, tone, seq, SENSOR, 1000).i_total == pytest.approx(2 * many.i_total, rel=1e-15)
    assert many.duration == pytest.approx(500 * 4 * (105e-6 + 3e-6), rel=1e-14)
    with pytest.raises(ValidationError):
        fisher_experiment(omega, tone, seq, SENSOR, 0)


def test_compare_at_50khz():
    rep = compare_protocols(TWO_PI * 50e3)
    assert rep.fi["resolute"][0] > rep.fi["hahn"][0]
    assert rep.fi["resolute"][0] > rep.fi["ramsey"][0]
    assert rep.crb["resolute"][0] == pytest.approx(1 / rep.fi["resolute"][0])


def test_compare_at_1mhz_hahn_wins():
    with pytest.warns(ResoluteWarning, match="below tau"):
        rep = compare_protocols(TWO_PI * 1e6)
    assert rep.fi["hahn"][0] >= rep.fi["resolute"][0]


def test_compare_below_inverse_t1_infeasible():
    # 50 Hz: far below 1/T1 = 1 kHz
    rep = compare_protocols(TWO_PI * 50.0)
    assert not any(rep.feasible[k][0] for k in ("resolute", "hahn", "ramsey"))


def test_compare_rejects_bad_grid():
    with pytest.raises(ValidationError):
        compare_protocols(TWO_PI * np.array([2e3, 1e3]))


def test_rayleigh_examples():
    assert rayleigh_feasible(math.inf, 1.0)
    assert not rayleigh_feasible(0.0, 1e6)
    # default threshold: CRB <= omega^2 / 4; at omega = 2 the boundary is i_total = 1 exactly
    assert rayleigh_feasible(1.0, 2.0) is True
    assert rayleigh_feasible(np.nextafter(1.0, 0.0), 2.0) is False
    np.testing.assert_array_equal(rayleigh_feasible(np.array([0.5, 2.0]), 2.0), [False, True])
    with pytest.raises(ValidationError):
        rayleigh_feasible(-1.0, 1.0)


def test_optimize_low_frequency(quiet):
    res = optimize_sequence(TWO_PI * 10e3, SENSOR, (0.5e-6, 20e-6), (5e-6, 900e-6))
    assert 0.5 * 5.1e-6 <= res.tau <= 1.5 * 5.1e-6
    assert res.t_corr >= 0.9 * 900e-6
    assert res.fi >= max(r[2] for r in res.ridges) * (1 - 1e-12)


def test_optimize_two_branches_at_fixed_large_tau(quiet):
    res = optimize_sequence(TWO_PI * 100e3, SENSOR, (10e-6, 10e-6), (20e-6, 900e-6))
    tcs = sorted(r[1] for r in res.ridges)
    assert len(tcs) >= 2
    assert min(np.diff(tcs)) > 0


def test_optimize_warns_on_ordering_and_rejects_empty_region():
    with pytest.warns(ResoluteWarning, match="tau >= t_corr"):
        res = optimize_sequence(TWO_PI * 100e3, SENSOR, (30e-6, 40e-6), (5e-6, 20e-6))
    assert any("tau >= t_corr" in note for note in res.warnings)
    assert res.fi > 0
    with pytest.raises(ValidationError, match="empty feasible region"):
        optimize_sequence(TWO_PI * 100e3, SENSOR, (1e-6, 5e-6), (2e-3, 3e-3))


def test_comparison_sensor_parameters():
    assert COMPARISON_SENSOR.T2_p == COMPARISON_SENSOR.T2_hahn == 5e-6
    assert COMPARISON_SENSOR.T2_star == 0.5e-6
    assert COMPARISON_SENSOR.T1 == 1000e-6
    assert COMPARISON_SENSOR.overhead == 3e-6
