"""Single-block propagation, channel combination and noise envelopes.

Rotation conventions (Bloch vector, start at +z = |0>):

* first pulse: pi/2 about +x, taking +z to -y;
* free precession by phi about +z (x' = x cos phi - y sin phi);
* middle pulses: pi/2 about the block's axis (x or y), one before and one
  after the correlation period;
* correlation period: transverse part erased, z scaled by ``d_store``;
* sensing coherence scaled by ``d_sense``;
* readout: pi/2 about +x, then the readout sign flips the signed term.

Carrying these through gives the product forms

    P0(X, s) = (1 + s C d cos phi1 cos phi2) / 2
    P0(Y, s) = (1 - s C d sin phi1 sin phi2) / 2,      d = d_sense d_store.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BLOCKS, BlockSpec, MiddlePhase, NoiseParams, ValidationError
from .phase import Channel


@dataclass(frozen=True)
class DecayFactors:
    d_sense: float = 1.0
    d_store: float = 1.0

    def __post_init__(self):
        for name in ("d_sense", "d_store"):
            value = getattr(self, name)
            if not (0.0 < value <= 1.0):
                raise ValidationError(f"{name} must lie in (0, 1], got {value!r}")

    @classmethod
    def from_times(cls, tau: float, t_corr: float, t2_p: float, t1: float) -> DecayFactors:
        return cls(math.exp(-tau / t2_p), math.exp(-t_corr / t1))

    @property
    def total(self) -> float:
        return self.d_sense * self.d_store


def propagate_block(block: BlockSpec, phi1, phi2, decay: DecayFactors, contrast: float = 1.0):
    """Probability of reading |0> after one block; vectorized over the phases."""
    cd = contrast * decay.total
    if block.middle_phase is MiddlePhase.X:
        signed = cd * np.cos(phi1) * np.cos(phi2)
    else:
        signed = -cd * np.sin(phi1) * np.sin(phi2)
    return 0.5 * (1.0 + block.readout_sign * signed)


def block_probabilities(phi1, phi2, decay: DecayFactors, contrast: float = 1.0) -> np.ndarray:
    """All four blocks in canonical order, stacked on the last axis."""
    return np.stack([propagate_block(b, phi1, phi2, decay, contrast) for b in BLOCKS], axis=-1)


def combine_channels(p_xplus, p_xminus, p_yplus, p_yminus):
    """(S+, S-) from the four block probabilities.

    With S(x) = P(X+) - P(X-) and S(y) = P(Y+) - P(Y-), S+ = S(x) + S(y) equals
    C d cos(phi1 + phi2) and S- = S(x) - S(y) equals C d cos(phi1 - phi2).
    """
    s_x = np.asarray(p_xplus) - np.asarray(p_xminus)
    s_y = np.asarray(p_yplus) - np.asarray(p_yminus)
    return s_x + s_y, s_x - s_y


def analytic_envelope(channel: Channel, tau, noise: NoiseParams):
    """Gaussian-noise decay of the phase-averaged Sum or Diff signal."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValidationError("tau must be >= 0")
    if channel is Channel.SUM:
        out = np.exp(-tau**2 / noise.alpha_corr)
    else:
        out = np.exp(-tau**2 / (4.0 * noise.alpha_fast))
    return float(out) if out.ndim == 0 else out


def ramsey_envelope(tau, alpha: float, gamma: float = 1.0):
    """exp(-gamma^2 tau^2 / (4 alpha)); field fluctuations of variance 1/(2 alpha)."""
    tau = np.asarray(tau, dtype=float)
    out = np.exp(-(gamma**2) * tau**2 / (4.0 * alpha))
    return float(out) if out.ndim == 0 else out


def ramsey_noise_envelope(tau, noise: NoiseParams):
    """Decay of a single window of length tau under both noise classes."""
    tau = np.asarray(tau, dtype=float)
    out = np.exp(-tau**2 * (1.0 / noise.alpha_corr + 1.0 / (4.0 * noise.alpha_fast)))
    return float(out) if out.ndim == 0 else out


def noise_rate_variances(noise: NoiseParams) -> tuple[float, float]:
    """Variances (rad^2/s^2) of the correlated and per-window fast rates.

    The correlated rate is shared by both windows of a repetition, the fast one
    is redrawn per window.  With these variances the phase averages reproduce
    exp(-tau^2/alpha_corr) on the Sum channel and exp(-tau^2/(4 alpha_fast)) on
    the Diff channel.
    """
    var_fast = 1.0 / noise.alpha_fast
    var_corr = 2.0 / noise.alpha_corr - 0.5 * var_fast
    if var_corr < -1e-12 * max(var_fast, 1e-300):
        raise ValidationError("alpha_corr must not exceed 4 * alpha_fast")
    return max(var_corr, 0.0), var_fast


def alphas_from_decay_times(t_ramsey: float, t_diff: float) -> tuple[float, float]:
    """(alpha_corr, alpha_fast) giving 1/e decay times t_ramsey and t_diff."""
    if not (0 < t_ramsey < t_diff):
        raise ValidationError("need 0 < t_ramsey < t_diff")
    alpha_fast = t_diff**2 / 4.0
    alpha_corr = 1.0 / (1.0 / t_ramsey**2 - 1.0 / (4.0 * alpha_fast))
    return alpha_corr, alpha_fast
