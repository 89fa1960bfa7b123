"""Shared domain types, unit conventions and parameter validation.

Internally every time is in seconds and every rate or frequency that enters a
phase is an angular frequency in rad/s.  File and command-line interfaces use
microseconds, kHz (cycles) and Gauss; the helpers at the bottom of this module
are the only place where those conversions happen.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# gyromagnetic ratios / 2pi, Hz per Gauss
GAMMA_C13_HZ_PER_G = 1.0705e3
GAMMA_ELECTRON_HZ_PER_G = 2.8025e6
GAMMA_NV = TWO_PI * GAMMA_ELECTRON_HZ_PER_G  # rad s^-1 G^-1

_GAMMAS = {"C13": GAMMA_C13_HZ_PER_G, "electron": GAMMA_ELECTRON_HZ_PER_G}


class ValidationError(ValueError):
    """A parameter set violates one of its documented invariants."""


class ResoluteWarning(UserWarning):
    """Soft violation of a validity guideline (the computation still runs)."""


class MiddlePhase(enum.Enum):
    X = "X"
    Y = "Y"


@dataclass(frozen=True)
class BlockSpec:
    """One phase-cycled block: axis of the middle pulses and readout sign."""

    middle_phase: MiddlePhase
    readout_sign: int

    def __post_init__(self):
        if not isinstance(self.middle_phase, MiddlePhase):
            raise ValidationError("middle_phase must be MiddlePhase.X or MiddlePhase.Y")
        if self.readout_sign not in (1, -1):
            raise ValidationError("readout_sign must be +1 or -1")

    @property
    def label(self) -> str:
        return f"{self.middle_phase.value}{'+' if self.readout_sign > 0 else '-'}"


# Fixed enumeration order used everywhere (arrays of block outcomes follow it).
BLOCKS: tuple[BlockSpec, ...] = (
    BlockSpec(MiddlePhase.X, 1),
    BlockSpec(MiddlePhase.X, -1),
    BlockSpec(MiddlePhase.Y, 1),
    BlockSpec(MiddlePhase.Y, -1),
)


def _finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SensorParams:
    """Probe coherence and relaxation times (s), readout contrast and dead time."""

    T1: float = 1000e-6
    T2_star: float = 0.38e-6
    T2_hahn: float = 4.3e-6
    T2_p: float = 5.1e-6
    contrast: float = 1.0
    overhead: float = 3e-6
    gamma_nv: float = GAMMA_NV

    def __post_init__(self):
        validate_sensor(self)


def validate_sensor(params: SensorParams) -> SensorParams:
    """Return ``params`` unchanged, or raise naming the first broken invariant."""
    for name in ("T1", "T2_star", "T2_hahn", "T2_p"):
        value = getattr(params, name)
        _finite(name, value)
        if value <= 0:
            raise ValidationError(f"{name} must be > 0, got {value!r}")
    _finite("overhead", params.overhead)
    if params.overhead < 0:
        raise ValidationError("overhead must be >= 0")
    if not (0.0 < params.contrast <= 1.0):
        raise ValidationError(f"contrast out of range (0, 1]: {params.contrast!r}")
    if params.T2_star > params.T2_hahn:
        raise ValidationError("T2* exceeds T2 (T2_star > T2_hahn)")
    if params.T2_hahn > params.T1:
        raise ValidationError("T2 exceeds T1 (T2_hahn > T1)")
    if params.T2_p > params.T1:
        raise ValidationError("T2p exceeds T1 (T2_p > T1)")
    if params.gamma_nv <= 0:
        raise ValidationError("gamma_nv must be > 0")
    return params


@dataclass(frozen=True)
class ToneSignal:
    """Pure tone A sin(omega t + phi).  ``phi=None`` means a fresh random phase
    per sequence."""

    amplitude: float
    omega: float
    phi: float | None = None

    def __post_init__(self):
        _finite("amplitude", self.amplitude)
        _finite("omega", self.omega)
        if self.amplitude < 0:
            raise ValidationError("tone amplitude must be >= 0")
        if self.omega < 0:
            raise ValidationError("tone omega must be >= 0")
        if self.phi is not None and not (0.0 <= self.phi < TWO_PI):
            raise ValidationError(f"tone phi must lie in [0, 2pi), got {self.phi!r}")

    def with_phi(self, phi: float) -> ToneSignal:
        return ToneSignal(self.amplitude, self.omega, float(phi) % TWO_PI)

    def with_omega(self, omega: float) -> ToneSignal:
        return ToneSignal(self.amplitude, float(omega), self.phi)


@dataclass(frozen=True)
class DcTerms:
    """Static phase-accumulation rates (rad/s): field detuning, hyperfine, dipolar."""

    detuning: float = 0.0
    hyperfine: float = 0.0
    dipolar: float = 0.0

    def __post_init__(self):
        for name in ("detuning", "hyperfine", "dipolar"):
            _finite(name, getattr(self, name))
        if self.dipolar < 0:
            raise ValidationError("dipolar coupling must be >= 0")

    @property
    def static_rate(self) -> float:
        return self.detuning + self.hyperfine + self.dipolar


@dataclass(frozen=True)
class NoiseParams:
    """Inverse-variance scales (s^2) of slow correlated and fast noise.

    ``math.inf`` switches a noise class off.
    """

    alpha_corr: float = math.inf
    alpha_fast: float = math.inf
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha_corr", "alpha_fast"):
            value = getattr(self, name)
            if math.isnan(value) or value <= 0:
                raise ValidationError(f"{name} must be > 0, got {value!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


@dataclass(frozen=True)
class SequenceParams:
    """Sensing time tau (split in two halves), correlation time and repetitions."""

    tau: float
    t_corr: float
    n_reps: int = 1

    def __post_init__(self):
        _finite("tau", self.tau)
        _finite("t_corr", self.t_corr)
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")
        if self.t_corr < 0:
            raise ValidationError("t_corr must be >= 0")
        if int(self.n_reps) != self.n_reps or self.n_reps < 1:
            raise ValidationError("n_reps must be an integer >= 1")
        if self.t_corr <= self.tau:
            warnings.warn(
                f"t_corr ({self.t_corr:.3g} s) does not exceed tau ({self.tau:.3g} s)",
                ResoluteWarning,
                stacklevel=3,
            )

    def check_against(self, sensor: SensorParams) -> None:
        if self.t_corr >= sensor.T1:
            warnings.warn("t_corr is not shorter than T1", ResoluteWarning, stacklevel=2)


@dataclass(frozen=True)
class TargetSpin:
    """Target electron spin: Larmor frequency (Hz), dipolar coupling (rad/s),
    Gaussian line standard deviation (Hz) and Rabi frequency (Hz)."""

    larmor_freq: float = 0.0
    dipolar: float = 0.0
    line_sigma: float = 15e6 / 2.355
    rabi: float = 1.0 / (2 * 440e-9)

    def __post_init__(self):
        for name in ("larmor_freq", "dipolar", "line_sigma", "rabi"):
            value = getattr(self, name)
            _finite(name, value)
            if value < 0:
                raise ValidationError(f"{name} must be >= 0")


def effective_period(seq: SequenceParams) -> float:
    """T~ = t_corr + tau/2, the spacing between the two window midpoints."""
    return seq.t_corr + 0.5 * seq.tau


def larmor_frequency(field_gauss, species: str = "C13"):
    """Larmor frequency in Hz of ``species`` in a field given in Gauss."""
    try:
        gamma = _GAMMAS[species]
    except KeyError:
        raise ValidationError(f"unknown species {species!r}; choose from {sorted(_GAMMAS)}") from None
    field = np.asarray(field_gauss, dtype=float)
    if np.any(field < 0):
        raise ValidationError("field must be >= 0")
    out = field * gamma
    return float(out) if out.ndim == 0 else out


# --- unit conversion at the I/O boundary ---

def us_to_s(x):
    return np.asarray(x, dtype=float) * 1e-6 if np.ndim(x) else float(x) * 1e-6


def s_to_us(x):
    return np.asarray(x, dtype=float) * 1e6 if np.ndim(x) else float(x) * 1e6


def khz_to_rad_s(x):
    return np.asarray(x, dtype=float) * (TWO_PI * 1e3) if np.ndim(x) else float(x) * (TWO_PI * 1e3)


def rad_s_to_khz(x):
    return np.asarray(x, dtype=float) / (TWO_PI * 1e3) if np.ndim(x) else float(x) / (TWO_PI * 1e3)


def us2_to_s2(x):
    return float(x) * 1e-12


def s2_to_us2(x):
    return float(x) * 1e12
