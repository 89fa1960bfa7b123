"""Accumulated sensor phases and phase-averaged filter functions.

The tone is A sin(omega t + phi).  A sensing window [a, a + L] accumulates

    W = A L sin(omega m + phi) sinc(omega L / 2),     m = a + L/2,

and every closed form below is a signed combination of such windows.  The
quadrature in :func:`phase_integral` integrates the defining integrals
directly and is the reference the closed forms are tested against.
"""

from __future__ import annotations

import enum
import math
import warnings

import numpy as np
from scipy import integrate

from .core import SequenceParams, ToneSignal, ValidationError, effective_period

QUAD_EPSREL = 1e-10
QUAD_MAX_SUBINTERVALS = 2**20


class Channel(enum.Enum):
    DIFF = "diff"  # Phi1 - Phi2, read out through S-
    SUM = "sum"  # Phi1 + Phi2, read out through S+


class Protocol(enum.Enum):
    RAMSEY = "ramsey"
    HAHN_ECHO = "hahn"
    RESOLUTE = "resolute"


def sinc(x):
    """sin(x)/x with sinc(0) = 1."""
    x = np.asarray(x, dtype=float)
    out = np.sinc(x / np.pi)
    return float(out) if out.ndim == 0 else out


def dsinc(x):
    """Derivative of :func:`sinc`; a short series takes over near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    out = np.where(small, -x / 3.0 + x**3 / 30.0, (xs * np.cos(xs) - np.sin(xs)) / xs**2)
    return float(out) if out.ndim == 0 else out


def window_phase(amplitude, omega, phi, start, length):
    """Closed-form integral of A sin(omega t + phi) over [start, start + length]."""
    mid = start + 0.5 * length
    return amplitude * length * np.sin(omega * mid + phi) * sinc(0.5 * omega * length)


def window_phase_domega(amplitude, omega, phi, start, length):
    """d/d omega of :func:`window_phase`."""
    mid = start + 0.5 * length
    arg = omega * mid + phi
    half = 0.5 * length
    return amplitude * length * (
        mid * np.cos(arg) * sinc(half * omega) + np.sin(arg) * half * dsinc(half * omega)
    )


def resolute_windows(seq: SequenceParams) -> tuple[tuple[float, float], tuple[float, float]]:
    """(start, length) of the two sensing windows of one RESOLUTE block."""
    half = 0.5 * seq.tau
    return (0.0, half), (seq.t_corr + half, half)


def _window_signs(seq: SequenceParams, protocol: Protocol, channel: Channel):
    if protocol is Protocol.RAMSEY:
        return [((0.0, seq.tau), 1.0)]
    if protocol is Protocol.HAHN_ECHO:
        half = 0.5 * seq.tau
        return [((0.0, half), 1.0), ((half, half), -1.0)]
    w1, w2 = resolute_windows(seq)
    return [(w1, 1.0), (w2, 1.0 if channel is Channel.SUM else -1.0)]


def _require_phi(tone: ToneSignal) -> float:
    if tone.phi is None:
        raise ValidationError("this operation needs a tone with a fixed phase phi")
    return tone.phi


def phase_integral(tone: ToneSignal, seq: SequenceParams, protocol: Protocol,
                   channel: Channel = Channel.DIFF) -> float:
    """Adaptive quadrature of the tone over the protocol's signed windows."""
    phi = _require_phi(tone)
    total = 0.0
    for (start, length), sign in _window_signs(seq, protocol, channel):
        # integrate over the unit interval so the absolute floor is scale free
        def f(u, start=start, length=length):
            return math.sin(tone.omega * (start + u * length) + phi)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value, _ = integrate.quad(f, 0.0, 1.0, epsrel=QUAD_EPSREL, epsabs=1e-14,
                                      limit=QUAD_MAX_SUBINTERVALS)
        total += sign * tone.amplitude * length * value
    if not math.isfinite(total):
        raise ArithmeticError("phase quadrature returned a non-finite value")
    return total


def resolute_phase_closed(tone: ToneSignal, seq: SequenceParams, channel: Channel):
    """Closed-form RESOLUTE phase for the Sum or Diff channel."""
    phi = _require_phi(tone)
    a, w, tau, tc = tone.amplitude, tone.omega, seq.tau, seq.t_corr
    env = a * tau * sinc(w * tau / 4)
    if channel is Channel.SUM:
        return env * np.sin(w * tc / 2 + w * tau / 2 + phi) * np.cos(w * tc / 2 + w * tau / 4)
    return -env * np.sin(w * tc / 2 + w * tau / 4) * np.cos(w * tc / 2 + w * tau / 2 + phi)


def ramsey_phase_closed(tone: ToneSignal, tau_r: float):
    """Closed-form Ramsey phase over [0, tau_r]."""
    phi = _require_phi(tone)
    a, w = tone.amplitude, tone.omega
    return a * tau_r * np.sin(w * tau_r / 2 + phi) * sinc(w * tau_r / 2)


def hahn_phase_closed(tone: ToneSignal, tau_he: float):
    """Closed-form Hahn-echo phase: + on the first half, - on the second."""
    phi = _require_phi(tone)
    a, w = tone.amplitude, tone.omega
    return -a * tau_he * np.sin(w * tau_he / 4) * sinc(w * tau_he / 4) * np.cos(w * tau_he / 2 + phi)


def filter_function(protocol: Protocol, channel: Channel, seq: SequenceParams, omega,
                    amplitude: float = 1.0):
    """Phase-averaged mean-square phase <Phi^2>_phi (rad^2), vectorized in omega."""
    w = np.asarray(omega, dtype=float)
    tau = seq.tau
    a2 = amplitude**2 * tau**2 / 2
    if protocol is Protocol.RAMSEY:
        out = a2 * sinc(w * tau / 2) ** 2
    elif protocol is Protocol.HAHN_ECHO:
        out = a2 * (np.sin(w * tau / 4) * sinc(w * tau / 4)) ** 2
    else:
        half = 0.5 * w * effective_period(seq)
        trig = np.cos(half) if channel is Channel.SUM else np.sin(half)
        out = a2 * (trig * sinc(w * tau / 4)) ** 2
    return float(out) if np.ndim(out) == 0 else out


def filter_map(tau: float, t_corr_grid, omega_grid, channel: Channel = Channel.SUM,
               amplitude: float = 1.0) -> np.ndarray:
    """RESOLUTE filter values on a (t_corr, omega) grid; rows follow ``t_corr_grid``."""
    tc = np.atleast_1d(np.asarray(t_corr_grid, dtype=float))
    w = np.atleast_1d(np.asarray(omega_grid, dtype=float))
    if tc.size == 0 or w.size == 0:
        raise ValidationError("filter_map needs non-empty grids")
    for name, grid in (("t_corr", tc), ("omega", w)):
        if grid.size > 1 and not (np.all(np.diff(grid) > 0) or np.all(np.diff(grid) < 0)):
            raise ValidationError(f"{name} grid must be strictly monotone")
    t_tilde = tc[:, None] + 0.5 * tau
    half = 0.5 * w[None, :] * t_tilde
    trig = np.cos(half) if channel is Channel.SUM else np.sin(half)
    return amplitude**2 * tau**2 / 2 * (trig * sinc(w[None, :] * tau / 4)) ** 2
