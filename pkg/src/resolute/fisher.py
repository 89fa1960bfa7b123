"""Fisher information for estimating the tone frequency omega.

Per-block outcome probabilities come from the block propagation closed forms
with the window phases of :mod:`resolute.phase`; their omega derivatives are
analytic.  The exact per-sequence information sums the four blocks and then
averages over a uniform grid of tone phases.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import optimize

from .core import (
    BLOCKS,
    TWO_PI,
    BlockSpec,
    MiddlePhase,
    ResoluteWarning,
    SensorParams,
    SequenceParams,
    ToneSignal,
    ValidationError,
    effective_period,
)
from .phase import sinc, window_phase, window_phase_domega

N_PHI_DEFAULT = 64
DEFAULT_AMPLITUDE = 1e6  # rad/s, one radian per microsecond
COMPARISON_SENSOR = SensorParams(T1=1000e-6, T2_star=0.5e-6, T2_hahn=5e-6, T2_p=5e-6,
                           contrast=1.0, overhead=3e-6)


def phi_grid(n_phi: int = N_PHI_DEFAULT) -> np.ndarray:
    if n_phi < 1:
        raise ValidationError("n_phi must be >= 1")
    return TWO_PI * np.arange(n_phi) / n_phi


def resolute_block_terms(amplitude, omega, phi, tau, t_corr, sensor: SensorParams):
    """(P0, dP0/domega) for the four blocks, stacked on a new last axis.

    All array arguments broadcast against each other.
    """
    half = 0.5 * tau
    start2 = t_corr + half
    p1 = window_phase(amplitude, omega, phi, 0.0, half)
    p2 = window_phase(amplitude, omega, phi, start2, half)
    d1 = window_phase_domega(amplitude, omega, phi, 0.0, half)
    d2 = window_phase_domega(amplitude, omega, phi, start2, half)
    cd = sensor.contrast * np.exp(-tau / sensor.T2_p - t_corr / sensor.T1)
    c1, s1, c2, s2 = np.cos(p1), np.sin(p1), np.cos(p2), np.sin(p2)
    gx = cd * c1 * c2
    gy = -cd * s1 * s2
    dgx = -cd * (s1 * c2 * d1 + c1 * s2 * d2)
    dgy = -cd * (c1 * s2 * d1 + s1 * c2 * d2)
    probs, derivs = [], []
    for block in BLOCKS:
        g, dg = (gx, dgx) if block.middle_phase is MiddlePhase.X else (gy, dgy)
        probs.append(0.5 * (1 + block.readout_sign * g))
        derivs.append(0.5 * block.readout_sign * dg)
    return np.stack(np.broadcast_arrays(*probs), -1), np.stack(np.broadcast_arrays(*derivs), -1)


def block_probability(block: BlockSpec, omega: float, tone: ToneSignal, seq: SequenceParams,
                      sensor: SensorParams) -> tuple[float, float]:
    """P0 of one block and its derivative with respect to omega."""
    if tone.phi is None:
        raise ValidationError("block_probability needs a tone with fixed phi")
    p, dp = resolute_block_terms(tone.amplitude, omega, tone.phi, seq.tau, seq.t_corr, sensor)
    k = BLOCKS.index(block)
    return float(p[..., k]), float(dp[..., k])


def fisher_single(p0, dp0):
    """dP^2 / (P (1 - P)) for a binary outcome; vectorized."""
    p = np.asarray(p0, dtype=float)
    dp = np.asarray(dp0, dtype=float)
    var = p * (1.0 - p)
    bad = (var <= 0) & (dp != 0)
    if np.any(bad):
        raise ValidationError("degenerate outcome: P0 in {0, 1} with nonzero derivative")
    safe = np.where(var > 0, var, 1.0)
    out = np.where(dp == 0, 0.0, dp**2 / safe)
    return float(out) if out.ndim == 0 else out


def _resolute_fi_grid(amplitude, omega, tau, t_corr, sensor, n_phi):
    phi = phi_grid(n_phi)
    shape = np.broadcast(np.asarray(omega), np.asarray(tau), np.asarray(t_corr)).shape
    expand = (...,) + (None,)
    p, dp = resolute_block_terms(amplitude, np.asarray(omega, float)[expand],
                                 phi, np.asarray(tau, float)[expand],
                                 np.asarray(t_corr, float)[expand], sensor)
    fi = fisher_single(p, dp).sum(axis=-1).mean(axis=-1)
    return np.broadcast_to(fi, shape)


def fisher_exact_sequence(omega, tone: ToneSignal, seq: SequenceParams, sensor: SensorParams,
                          n_phi: int = N_PHI_DEFAULT):
    """Phase-averaged four-block Fisher information of one sequence (s^2)."""
    out = _resolute_fi_grid(tone.amplitude, omega, seq.tau, seq.t_corr, sensor, n_phi)
    return float(out) if out.ndim == 0 else np.array(out)


def fisher_approx(omega, tone: ToneSignal, seq: SequenceParams, sensor: SensorParams,
                  phi: float | None = None):
    """Closed-form small-decay approximation of the per-sequence information.

    8 A^2 tau^2 T~^2 exp(-2 tau/T2p - t_corr/T1) cos^2(omega T~ + omega tau/4 + phi)
    sinc^2(omega tau/4).  ``phi=None`` replaces cos^2 by its phase average 1/2.
    """
    w = np.asarray(omega, dtype=float)
    tau, tc = seq.tau, seq.t_corr
    tt = effective_period(seq)
    env = 8 * tone.amplitude**2 * tau**2 * tt**2 * math.exp(-2 * tau / sensor.T2_p - tc / sensor.T1)
    trig = 0.5 if phi is None else np.cos(w * tt + w * tau / 4 + phi) ** 2
    out = env * trig * sinc(w * tau / 4) ** 2
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ExperimentFisher:
    i_total: float
    i_closed: float  # closed accumulation formula, diagnostic only
    ratio: float
    duration: float  # N 4 (tau + t_corr + overhead)


def fisher_experiment(omega, tone: ToneSignal, seq: SequenceParams, sensor: SensorParams,
                      n_sequences: int, n_phi: int = N_PHI_DEFAULT) -> ExperimentFisher:
    """Total information of ``n_sequences`` independent sequences."""
    if int(n_sequences) != n_sequences or n_sequences < 1:
        raise ValidationError("n_sequences must be an integer >= 1")
    i_total = n_sequences * fisher_exact_sequence(omega, tone, seq, sensor, n_phi)
    tt = effective_period(seq)
    t_tot = 4 * n_sequences * tt
    i_closed = (4 * tone.amplitude**2 * seq.tau**2 * tt * t_tot * 4
                * math.exp(-2 * seq.tau / sensor.T2_p) * math.exp(-2 * seq.t_corr / sensor.T1))
    ratio = i_total / i_closed if i_closed > 0 else math.nan
    duration = 4 * n_sequences * (seq.tau + seq.t_corr + sensor.overhead)
    return ExperimentFisher(float(i_total), float(i_closed), float(ratio), float(duration))


# --- Ramsey and Hahn echo references ---

def _quadrature_fi(phase, dphase, d, contrast):
    # four readouts: +-cos and +-sin of the accumulated phase
    cd = contrast * d
    total = 0.0
    for g, dg in ((np.cos(phase), -np.sin(phase) * dphase), (np.sin(phase), np.cos(phase) * dphase)):
        for s in (1.0, -1.0):
            total = total + fisher_single(0.5 * (1 + s * cd * g), 0.5 * s * cd * dg)
    return total


def fisher_ramsey(omega, amplitude: float, tau_r: float, t2_star: float, contrast: float = 1.0,
                  n_phi: int = N_PHI_DEFAULT):
    """Phase-averaged information of one four-readout Ramsey set."""
    w = np.asarray(omega, dtype=float)[..., None]
    phi = phi_grid(n_phi)
    ph = window_phase(amplitude, w, phi, 0.0, tau_r)
    dph = window_phase_domega(amplitude, w, phi, 0.0, tau_r)
    out = _quadrature_fi(ph, dph, math.exp(-tau_r / t2_star), contrast).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def fisher_hahn(omega, amplitude: float, tau_he, t2: float, contrast: float = 1.0,
                n_phi: int = N_PHI_DEFAULT):
    """Phase-averaged information of one four-readout Hahn-echo set."""
    w = np.asarray(omega, dtype=float)[..., None]
    tau = np.asarray(tau_he, dtype=float)[..., None]
    phi = phi_grid(n_phi)
    half = 0.5 * tau
    ph = window_phase(amplitude, w, phi, 0.0, half) - window_phase(amplitude, w, phi, half, half)
    dph = (window_phase_domega(amplitude, w, phi, 0.0, half)
           - window_phase_domega(amplitude, w, phi, half, half))
    out = _quadrature_fi(ph, dph, np.exp(-tau / t2), contrast).mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# --- feasibility and protocol comparison ---

RAYLEIGH_SCALE = 0.25
RAYLEIGH_POWER = 2.0


def rayleigh_feasible(i_total, omega, scale: float = RAYLEIGH_SCALE, power: float = RAYLEIGH_POWER):
    """True where the CRB 1/i_total is at most ``scale * omega**power``.

    The default (1/4, 2) is the resolution limit Delta omega <= omega / 2.  The
    boundary itself counts as feasible.
    """
    i = np.asarray(i_total, dtype=float)
    w = np.asarray(omega, dtype=float)
    if np.any(i < 0):
        raise ValidationError("i_total must be >= 0")
    with np.errstate(divide="ignore"):
        crb = np.where(i > 0, 1.0 / np.where(i > 0, i, 1.0), np.inf)
    out = crb <= scale * w**power
    return bool(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class FisherReport:
    omega: np.ndarray
    fi: dict[str, np.ndarray]
    crb: dict[str, np.ndarray]
    feasible: dict[str, np.ndarray]
    params: dict[str, Any] = field(default_factory=dict)


def compare_protocols(omega, sensor: SensorParams = COMPARISON_SENSOR, amplitude: float = DEFAULT_AMPLITUDE,
                      tau: float | None = None, n_sequences: int = 500, n_phi: int = N_PHI_DEFAULT,
                      rayleigh_scale: float = RAYLEIGH_SCALE,
                      rayleigh_power: float = RAYLEIGH_POWER) -> FisherReport:
    """Total information of RESOLUTE, Hahn echo and Ramsey for equal durations.

    RESOLUTE uses tau (default T2p) and t_corr = 2 pi / omega capped at T1; the
    echo uses tau_H = min(2 pi / omega, T2); Ramsey uses tau_R = T2*.  The
    RESOLUTE experiment of ``n_sequences`` sets the total duration, which the
    other protocols fill with as many four-readout sets as fit.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if w.size > 1 and not np.all(np.diff(w) > 0):
        raise ValidationError("omega grid must be strictly increasing")
    if np.any(w <= 0):
        raise ValidationError("omega grid must be positive")
    tau = sensor.T2_p if tau is None else tau
    period = TWO_PI / w
    t_corr = np.minimum(period, sensor.T1)
    if np.any(t_corr < tau):
        warnings.warn("matched t_corr falls below tau at high frequencies", ResoluteWarning,
                      stacklevel=2)
    i_res = n_sequences * _resolute_fi_grid(amplitude, w, tau, t_corr, sensor, n_phi)
    t_tot = n_sequences * 4 * (tau + t_corr + sensor.overhead)
    tau_h = np.minimum(period, sensor.T2_hahn)
    i_hahn = t_tot / (4 * (tau_h + sensor.overhead)) * fisher_hahn(
        w, amplitude, tau_h, sensor.T2_hahn, sensor.contrast, n_phi)
    tau_r = sensor.T2_star
    i_ram = t_tot / (4 * (tau_r + sensor.overhead)) * fisher_ramsey(
        w, amplitude, tau_r, sensor.T2_star, sensor.contrast, n_phi)
    fi = {"resolute": np.asarray(i_res, float), "hahn": np.asarray(i_hahn, float),
          "ramsey": np.asarray(i_ram, float)}
    with np.errstate(divide="ignore"):
        crb = {k: np.where(v > 0, 1.0 / np.where(v > 0, v, 1.0), np.inf) for k, v in fi.items()}
    feasible = {k: np.atleast_1d(rayleigh_feasible(v, w, rayleigh_scale, rayleigh_power))
                for k, v in fi.items()}
    params = {"amplitude": amplitude, "tau": tau, "n_sequences": n_sequences, "n_phi": n_phi,
              "T1": sensor.T1, "T2_p": sensor.T2_p, "T2_hahn": sensor.T2_hahn,
              "T2_star": sensor.T2_star, "overhead": sensor.overhead,
              "rayleigh_scale": rayleigh_scale, "rayleigh_power": rayleigh_power}
    return FisherReport(w, fi, crb, feasible, params)


# --- (tau, t_corr) optimization ---

@dataclass(frozen=True)
class OptimizeResult:
    tau: float
    t_corr: float
    fi: float
    ridges: tuple[tuple[float, float, float], ...]  # (tau, t_corr, fi) local maxima
    warnings: tuple[str, ...] = ()


def _local_maxima(grid: np.ndarray) -> list[tuple[int, int]]:
    padded = np.pad(grid, 1, constant_values=-np.inf)
    centre = padded[1:-1, 1:-1]
    is_max = np.ones_like(grid, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neighbour = padded[1 + di:padded.shape[0] - 1 + di, 1 + dj:padded.shape[1] - 1 + dj]
            is_max &= centre >= neighbour
    is_max &= centre > 0
    return [tuple(ix) for ix in np.argwhere(is_max)]


def _golden(f, grid: np.ndarray, x0: float) -> float:
    """Maximize f around x0 inside the neighbouring grid cells."""
    if grid.size == 1:
        return float(grid[0])
    k = int(np.searchsorted(grid, x0))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    lo, hi = min(lo, x0), max(hi, x0)
    f0 = f(x0)
    if lo < x0 < hi and f0 > f(lo) and f0 > f(hi):
        res = optimize.minimize_scalar(lambda x: -f(x), bracket=(lo, x0, hi), method="golden",
                                       tol=1e-10)
    else:
        # maximum sits on a cell edge: bounded scalar search over both cells
        res = optimize.minimize_scalar(lambda x: -f(x), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12 * hi})
    x = float(res.x)
    return x if lo <= x <= hi and f(x) >= f0 else float(x0)


def optimize_sequence(omega_target: float, sensor: SensorParams, tau_bounds: tuple[float, float],
                      t_corr_bounds: tuple[float, float], amplitude: float = DEFAULT_AMPLITUDE,
                      n_tau: int = 48, n_tcorr: int = 400, n_phi: int = N_PHI_DEFAULT,
                      refine_rounds: int = 3) -> OptimizeResult:
    """Grid search then per-axis golden-section refinement of the exact FI.

    ``tau_bounds`` with equal ends fixes tau.  Returns the global optimum and
    every grid local maximum, sorted by information.
    """
    (t_lo, t_hi), (c_lo, c_hi) = tau_bounds, t_corr_bounds
    if not (0 < t_lo <= t_hi) or not (0 < c_lo <= c_hi):
        raise ValidationError("bounds must be positive and ordered")
    notes = []
    if c_lo >= sensor.T1:
        raise ValidationError("empty feasible region: t_corr lower bound is not below T1")
    if c_hi > sensor.T1:
        c_hi = sensor.T1
        notes.append("t_corr upper bound clipped to T1")
    if t_hi >= c_lo:
        if t_lo >= c_hi:
            notes.append("tau >= t_corr everywhere in the search box")
        else:
            notes.append("tau >= t_corr over part of the search box")
    taus = np.geomspace(t_lo, t_hi, n_tau) if t_hi > t_lo else np.array([t_lo])
    tcs = np.geomspace(c_lo, c_hi, n_tcorr) if c_hi > c_lo else np.array([c_lo])

    def fi(tau, tc):
        return _resolute_fi_grid(amplitude, omega_target, tau, tc, sensor, n_phi)

    grid = np.asarray(fi(taus[:, None], tcs[None, :]), dtype=float)
    if not np.all(np.isfinite(grid)):
        raise ArithmeticError("non-finite Fisher information on the search grid")
    maxima = _local_maxima(grid)
    ridges = sorted(((float(taus[i]), float(tcs[j]), float(grid[i, j])) for i, j in maxima),
                    key=lambda r: -r[2])
    i, j = np.unravel_index(np.argmax(grid), grid.shape)
    tau_best, tc_best = float(taus[i]), float(tcs[j])
    for _ in range(refine_rounds):
        tc_best = _golden(lambda x: float(fi(tau_best, x)), tcs, tc_best)
        tau_best = _golden(lambda x: float(fi(x, tc_best)), taus, tau_best)
    best = float(fi(tau_best, tc_best))
    if best < grid[i, j]:
        tau_best, tc_best, best = float(taus[i]), float(tcs[j]), float(grid[i, j])
    for note in notes:
        warnings.warn(note, ResoluteWarning, stacklevel=2)
    return OptimizeResult(tau_best, tc_best, best, tuple(ridges), tuple(notes))
