"""Monte-Carlo trace synthesis with shot noise, Gaussian field noise and
DEER-style target flips.

Randomness: every sweep point owns the generator
``default_rng(SeedSequence([seed, point_index]))`` and consumes it in a fixed
order, so a trace does not depend on how points are scheduled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .blocks import DecayFactors, block_probabilities, combine_channels, noise_rate_variances
from .core import (
    TWO_PI,
    DcTerms,
    NoiseParams,
    ResoluteWarning,
    SensorParams,
    SequenceParams,
    TargetSpin,
    ToneSignal,
    ValidationError,
)
from .phase import Protocol, resolute_windows, window_phase

SWEEP_AXES = ("tau", "tcorr")


@dataclass(frozen=True)
class Sweep:
    axis: str = "tcorr"
    start: float = 10e-6
    stop: float = 210e-6
    n_points: int = 201

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValidationError(f"sweep axis must be one of {SWEEP_AXES}")
        if not (0 < self.start < self.stop):
            raise ValidationError("sweep bounds must be positive and ordered (0 < start < stop)")
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ValidationError("sweep n_points must be an integer >= 1")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, int(self.n_points))


@dataclass(frozen=True)
class SimConfig:
    sensor: SensorParams
    seq: SequenceParams
    tones: tuple[ToneSignal, ...] = ()
    dc: DcTerms = DcTerms()
    noise: NoiseParams = NoiseParams()
    sweep: Sweep = Sweep()
    shots_per_block: int = 100
    # use the block probabilities themselves instead of binomial shot estimates
    exact_probabilities: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(self.tones))
        if int(self.shots_per_block) != self.shots_per_block or self.shots_per_block < 1:
            raise ValidationError("shots_per_block must be an integer >= 1")


@dataclass(frozen=True, eq=False)
class Trace:
    """A swept record: abscissa (SI units) plus named columns of equal length.

    Mean columns come with ``<name>_err`` standard-error columns.
    """

    axis: str
    x: np.ndarray
    columns: Mapping[str, np.ndarray]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        for name, col in cols.items():
            if col.shape != x.shape:
                raise ValidationError(f"column {name!r} length differs from the abscissa")
            if name.endswith("_err") and np.any(col < 0):
                raise ValidationError(f"standard errors in {name!r} must be >= 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __len__(self):
        return self.x.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]


def _point_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _point_seq(cfg: SimConfig, x: float) -> SequenceParams:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResoluteWarning)
        if cfg.sweep.axis == "tau":
            return SequenceParams(x, cfg.seq.t_corr, cfg.seq.n_reps)
        return SequenceParams(cfg.seq.tau, x, cfg.seq.n_reps)


def _tone_phases(cfg: SimConfig, rng, n_reps: int) -> np.ndarray:
    phis = np.empty((n_reps, len(cfg.tones)))
    for k, tone in enumerate(cfg.tones):
        phis[:, k] = rng.uniform(0.0, TWO_PI, n_reps) if tone.phi is None else tone.phi
    return phis


def _windows_phase(cfg: SimConfig, phis: np.ndarray, windows, dc_rate: float) -> list[np.ndarray]:
    out = []
    for start, length in windows:
        total = np.full(phis.shape[0], dc_rate * length)
        for k, tone in enumerate(cfg.tones):
            total = total + window_phase(tone.amplitude, tone.omega, phis[:, k], start, length)
        out.append(total)
    return out


def _mean_err(samples: np.ndarray) -> tuple[float, float]:
    n = samples.shape[0]
    mean = float(np.mean(samples))
    err = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, err


def _estimate(rng, probs: np.ndarray, cfg: SimConfig) -> np.ndarray:
    probs = np.clip(probs, 0.0, 1.0)
    if cfg.exact_probabilities:
        return probs
    return rng.binomial(cfg.shots_per_block, probs) / cfg.shots_per_block


def _resolute_point(cfg: SimConfig, seq: SequenceParams, rng, dipolar: float = 0.0,
                    p_flip: float = 0.0) -> dict[str, tuple[float, float]]:
    n = seq.n_reps
    var_corr, var_fast = noise_rate_variances(cfg.noise)
    phis = _tone_phases(cfg, rng, n)
    corr = rng.normal(0.0, math.sqrt(var_corr), n)
    fast = rng.normal(0.0, math.sqrt(var_fast), (n, 2))
    flips = rng.random(n) < p_flip
    w1, w2 = resolute_windows(seq)
    static = cfg.dc.detuning + cfg.dc.hyperfine + cfg.dc.dipolar
    phi1, phi2 = _windows_phase(cfg, phis, (w1, w2), static)
    half = 0.5 * seq.tau
    phi1 = phi1 + (corr + fast[:, 0]) * half + dipolar * half
    phi2 = phi2 + (corr + fast[:, 1]) * half + np.where(flips, -1.0, 1.0) * dipolar * half
    decay = DecayFactors(1.0, math.exp(-seq.t_corr / cfg.sensor.T1))
    probs = block_probabilities(phi1, phi2, decay, cfg.sensor.contrast)
    est = _estimate(rng, probs, cfg)
    s_plus, s_minus = combine_channels(est[:, 0], est[:, 1], est[:, 2], est[:, 3])
    return {
        "s_minus": _mean_err(s_minus),
        "s_plus": _mean_err(s_plus),
        "s_x": _mean_err(est[:, 0] - est[:, 1]),
        "s_y": _mean_err(est[:, 2] - est[:, 3]),
    }


def _single_window_point(cfg: SimConfig, seq: SequenceParams, rng, echo: bool):
    # Ramsey and Hahn echo: S = P(+) - P(-) = C cos(Phi) from two readout signs
    n = seq.n_reps
    var_corr, var_fast = noise_rate_variances(cfg.noise)
    phis = _tone_phases(cfg, rng, n)
    corr = rng.normal(0.0, math.sqrt(var_corr), n)
    fast = rng.normal(0.0, math.sqrt(var_fast), (n, 2))
    static = cfg.dc.detuning + cfg.dc.hyperfine + cfg.dc.dipolar
    tau = seq.tau
    if echo:
        half = 0.5 * tau
        a, b = _windows_phase(cfg, phis, ((0.0, half), (half, half)), static)
        phase = (a - b) + (fast[:, 0] - fast[:, 1]) * half
    else:
        (phase,) = _windows_phase(cfg, phis, ((0.0, tau),), static)
        phase = phase + (corr + fast[:, 0]) * tau
    signed = cfg.sensor.contrast * np.cos(phase)
    probs = np.stack([0.5 * (1 + signed), 0.5 * (1 - signed)], axis=-1)
    est = _estimate(rng, probs, cfg)
    return {"signal": _mean_err(est[:, 0] - est[:, 1])}


def _run(cfg: SimConfig, point_fn, extra_meta: Mapping[str, Any]) -> Trace:
    xs = cfg.sweep.values()
    rows: dict[str, list[float]] = {}
    for i, x in enumerate(xs):
        seq = _point_seq(cfg, float(x))
        result = point_fn(seq, _point_rng(cfg.noise.seed, i))
        for name, (mean, err) in result.items():
            rows.setdefault(name, []).append(mean)
            rows.setdefault(name + "_err", []).append(err)
    meta = {"seed": cfg.noise.seed, "sweep_axis": cfg.sweep.axis}
    meta.update(extra_meta)
    return Trace(cfg.sweep.axis, xs, {k: np.array(v) for k, v in rows.items()}, meta)


def simulate_trace(cfg: SimConfig, protocol: Protocol = Protocol.RESOLUTE) -> Trace:
    """Sweep ``cfg.sweep`` and return per-point means and standard errors.

    RESOLUTE traces carry ``s_minus``, ``s_plus``, ``s_x`` and ``s_y``; Ramsey
    and Hahn-echo traces carry ``signal``.  Ramsey and Hahn echo sense over the
    whole of ``tau``.
    """
    if protocol is Protocol.RESOLUTE:
        def fn(seq, rng):
            return _resolute_point(cfg, seq, rng)
    else:
        echo = protocol is Protocol.HAHN_ECHO

        def fn(seq, rng):
            return _single_window_point(cfg, seq, rng, echo)
    return _run(cfg, fn, {"protocol": protocol.value})


def simulate_deer_resolute(cfg: SimConfig, target: TargetSpin, p_flip: float) -> Trace:
    """RESOLUTE trace with a target spin that is flipped during t_corr.

    The dipolar rate enters window 1 with +omega_dd and window 2 with a sign
    that is reversed with probability ``p_flip`` per repetition, so the Diff
    channel reads (1 - p) + p cos(omega_dd tau) times the contrast.
    """
    if not (0.0 <= p_flip <= 1.0):
        raise ValidationError(f"p_flip must lie in [0, 1], got {p_flip!r}")

    def fn(seq, rng):
        return _resolute_point(cfg, seq, rng, dipolar=target.dipolar, p_flip=p_flip)

    return _run(cfg, fn, {"protocol": "resolute-deer", "p_flip": p_flip,
                          "dipolar_rad_s": target.dipolar})
