import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resolute.core import SequenceParams, ToneSignal, ValidationError
from resolute.phase import (
    Channel,
    Protocol,
    filter_function,
    filter_map,
    hahn_phase_closed,
    phase_integral,
    ramsey_phase_closed,
    resolute_phase_closed,
    sinc,
)

TWO_PI = 2 * math.pi


def closed(protocol, channel, tone, seq):
    if protocol is Protocol.RESOLUTE:
        return resolute_phase_closed(tone, seq, channel)
    if protocol is Protocol.RAMSEY:
        return ramsey_phase_closed(tone, seq.tau)
    return hahn_phase_closed(tone, seq.tau)


CASES = [(Protocol.RESOLUTE, Channel.SUM), (Protocol.RESOLUTE, Channel.DIFF),
         (Protocol.RAMSEY, Channel.SUM), (Protocol.HAHN_ECHO, Channel.SUM)]


def random_draws(rng, n):
    for _ in range(n):
        amp = 10 ** rng.uniform(-1, 7)
        omega = TWO_PI * 10 ** rng.uniform(2, 6.5)
        tau = rng.uniform(0.2e-6, 20e-6)
        tc = rng.uniform(1.01 * tau, 1000e-6)
        yield ToneSignal(amp, omega, rng.uniform(0, TWO_PI)), SequenceParams(tau, tc)


@pytest.mark.parametrize("protocol, channel", CASES)
def test_closed_form_matches_quadrature(protocol, channel):
    rng = np.random.default_rng(11)
    for tone, seq in random_draws(rng, 100):
        scale = tone.amplitude * seq.tau
        err = abs(closed(protocol, channel, tone, seq) - phase_integral(tone, seq, protocol, channel))
        assert err <= 1e-9 * scale


def test_diff_vanishes_at_dc():
    seq = SequenceParams(4e-6, 50e-6)
    for phi in np.linspace(0, 6, 7):
        tone = ToneSignal(1.0, 0.0, phi)
        assert resolute_phase_closed(tone, seq, Channel.DIFF) == 0.0
        assert abs(phase_integral(tone, seq, Protocol.RESOLUTE, Channel.DIFF)) < 1e-20


def test_sum_at_dc_accumulates_a_tau():
    seq = SequenceParams(4e-6, 50e-6)
    tone = ToneSignal(1.0, 0.0, math.pi / 2)
    assert phase_integral(tone, seq, Protocol.RESOLUTE, Channel.SUM) == pytest.approx(4e-6, rel=1e-12)
    assert resolute_phase_closed(tone, seq, Channel.SUM) == pytest.approx(4e-6, rel=1e-15)
    assert resolute_phase_closed(ToneSignal(1.0, 0.0, 0.0), seq, Channel.SUM) == 0.0


def test_sum_equals_reference_expression():
    # the published two-window closed form, written out term by term
    a, w, phi, tau, tc = 3.7e4, TWO_PI * 71e3, 0.9, 5.5e-6, 83e-6
    ref = (a * tau * math.sin(w * tc / 2 + w * tau / 2 + phi) * math.cos(w * tc / 2 + w * tau / 4)
           * math.sin(w * tau / 4) / (w * tau / 4))
    got = resolute_phase_closed(ToneSignal(a, w, phi), SequenceParams(tau, tc), Channel.SUM)
    assert got == pytest.approx(ref, rel=1e-13)


def test_diff_cancels_at_full_period():
    tau, tc = 5e-6, 95e-6
    omega = TWO_PI / (tc + tau / 2)
    seq = SequenceParams(tau, tc)
    for phi in (0.0, 1.0, 2.5, 4.0):
        tone = ToneSignal(2e5, omega, phi)
        assert abs(resolute_phase_closed(tone, seq, Channel.DIFF)) < 1e-12 * 2e5 * tau
        assert abs(phase_integral(tone, seq, Protocol.RESOLUTE, Channel.DIFF)) < 1e-9 * 2e5 * tau


def test_ramsey_dc(quiet):
    seq = SequenceParams(2e-6, 1e-6)
    # the integral of A sin(phi) over tau_R: full accumulation at phi = pi/2, none at phi = 0
    assert ramsey_phase_closed(ToneSignal(1.0, 0.0, math.pi / 2), 2e-6) == pytest.approx(2e-6, rel=1e-15)
    assert ramsey_phase_closed(ToneSignal(1.0, 0.0, 0.0), 2e-6) == 0.0
    assert phase_integral(ToneSignal(1.0, 0.0, math.pi / 2), seq, Protocol.RAMSEY) == pytest.approx(2e-6)


def test_hahn_examples():
    for phi in (0.0, 1.0, 3.0):
        assert hahn_phase_closed(ToneSignal(5.0, 0.0, phi), 4e-6) == 0.0
    tau = 4e-6
    tone = ToneSignal(1e5, TWO_PI / tau, math.pi / 2)
    assert abs(hahn_phase_closed(tone, tau)) < 1e-12


def test_quadrature_needs_phase():
    with pytest.raises(ValidationError):
        phase_integral(ToneSignal(1.0, 1.0), SequenceParams(1e-6, 1e-5), Protocol.RAMSEY)


@settings(max_examples=50, deadline=None)
@given(amp=st.floats(0.0, 1e6), k=st.floats(0.0, 100.0), phi=st.floats(0.0, 6.28),
       omega=st.floats(0.0, 1e7))
def test_phase_linear_in_amplitude(amp, k, phi, omega):
    seq = SequenceParams(5e-6, 100e-6)
    base = resolute_phase_closed(ToneSignal(amp, omega, phi), seq, Channel.SUM)
    scaled = resolute_phase_closed(ToneSignal(amp * k, omega, phi), seq, Channel.SUM)
    assert scaled == pytest.approx(k * base, rel=1e-12, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(amp=st.floats(0.0, 1e6), k=st.floats(0.0, 100.0), omega=st.floats(0.0, 1e7))
def test_filter_quadratic_in_amplitude(amp, k, omega):
    seq = SequenceParams(5e-6, 100e-6)
    for proto, ch in CASES:
        base = filter_function(proto, ch, seq, omega, amp)
        assert filter_function(proto, ch, seq, omega, amp * k) == pytest.approx(
            k * k * base, rel=1e-12, abs=1e-300)


def test_sinc_at_zero():
    assert sinc(0.0) == 1.0
    assert sinc(math.pi) == pytest.approx(0.0, abs=1e-16)


def test_filter_dc_limits():
    seq = SequenceParams(5e-6, 100e-6)
    assert filter_function(Protocol.RESOLUTE, Channel.DIFF, seq, 0.0, 2.0) == 0.0
    assert filter_function(Protocol.RESOLUTE, Channel.SUM, seq, 0.0, 2.0) == pytest.approx(
        4 * 25e-12 / 2, rel=1e-15)


def mc_mean_square(protocol, channel, seq, omega, rng, n=100_000):
    # stratified uniform phases: one draw in each of n equal slices of [0, 2 pi)
    phis = (np.arange(n) + rng.random(n)) * (TWO_PI / n)
    w, tau, tc = omega, seq.tau, seq.t_corr
    if protocol is Protocol.RESOLUTE:
        env = tau * sinc(w * tau / 4)
        if channel is Channel.SUM:
            phase = env * np.sin(w * tc / 2 + w * tau / 2 + phis) * np.cos(w * tc / 2 + w * tau / 4)
        else:
            phase = -env * np.sin(w * tc / 2 + w * tau / 4) * np.cos(w * tc / 2 + w * tau / 2 + phis)
    elif protocol is Protocol.RAMSEY:
        phase = tau * np.sin(w * tau / 2 + phis) * sinc(w * tau / 2)
    else:
        phase = -tau * np.sin(w * tau / 4) * sinc(w * tau / 4) * np.cos(w * tau / 2 + phis)
    return float(np.mean(phase**2))


@pytest.mark.parametrize("protocol, channel", CASES)
def test_filter_matches_monte_carlo(protocol, channel):
    rng = np.random.default_rng(5)
    for _ in range(10):
        tau = rng.uniform(1e-6, 10e-6)
        seq = SequenceParams(tau, rng.uniform(2 * tau, 500e-6))
        omega = TWO_PI * 10 ** rng.uniform(3, 5.5)
        analytic = filter_function(protocol, channel, seq, omega)
        mc = mc_mean_square(protocol, channel, seq, omega, rng)
        assert mc == pytest.approx(analytic, rel=1e-2, abs=1e-30)


def test_filter_map_matches_filter_function():
    tcs = np.linspace(10e-6, 200e-6, 7)
    ws = TWO_PI * np.linspace(10e3, 200e3, 5)
    grid = filter_map(5e-6, tcs, ws, Channel.DIFF, 3.0)
    assert grid.shape == (7, 5)
    for i, tc in enumerate(tcs):
        row = filter_function(Protocol.RESOLUTE, Channel.DIFF, SequenceParams(5e-6, tc), ws, 3.0)
        np.testing.assert_allclose(grid[i], row, rtol=1e-14)


def test_filter_map_single_cell():
    seq = SequenceParams(5e-6, 100e-6)
    grid = filter_map(5e-6, [100e-6], [TWO_PI * 50e3])
    assert grid.shape == (1, 1)
    assert grid[0, 0] == pytest.approx(
        filter_function(Protocol.RESOLUTE, Channel.SUM, seq, TWO_PI * 50e3), rel=1e-15)


def test_filter_map_rejects_bad_grids():
    with pytest.raises(ValidationError):
        filter_map(5e-6, [], [1.0])
    with pytest.raises(ValidationError):
        filter_map(5e-6, [1e-5, 3e-5, 2e-5], [1.0])


def test_filter_period_is_one_larmor_period():
    f = 68.8e3
    w = TWO_PI * f
    tcs = np.linspace(20e-6, 120e-6, 50)
    a = filter_map(6e-6, tcs, [w])[:, 0]
    b = filter_map(6e-6, tcs + 1 / f, [w])[:, 0]
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-30)
