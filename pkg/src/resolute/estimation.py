"""Periodograms, damped Gauss-Newton fits and estimator-versus-bound reports."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .core import TWO_PI, ResoluteWarning, SensorParams, SequenceParams, ValidationError
from .fisher import N_PHI_DEFAULT, _resolute_fi_grid, fisher_single, phi_grid, resolute_block_terms
from .simulate import Trace

MAX_ITER = 500
DAMP_UP = 10.0
DAMP_DOWN = 3.0


class FitError(RuntimeError):
    """Least-squares fit failed (no convergence or singular normal equations)."""


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with 1 sigma uncertainties.

    Parameters whose Jacobian column vanished at the optimum are listed in
    ``unidentifiable`` and carry an infinite uncertainty.
    """

    model: str
    params: dict[str, float]
    errors: dict[str, float]
    residual_norm: float
    converged: bool
    n_iter: int
    unidentifiable: tuple[str, ...] = ()
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if any(not (e >= 0) for e in self.errors.values()):
            raise ValidationError("uncertainties must be >= 0")

    @property
    def reliable(self) -> bool:
        return self.converged

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "params": dict(self.params),
            "errors": dict(self.errors),
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "reliable": self.reliable,
            "n_iter": self.n_iter,
            "unidentifiable": list(self.unidentifiable),
            "extras": dict(self.extras),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FitResult:
        return cls(data["model"], dict(data["params"]), dict(data["errors"]),
                   float(data["residual_norm"]), bool(data["converged"]), int(data["n_iter"]),
                   tuple(data.get("unidentifiable", ())), dict(data.get("extras", {})))


# --- spectra ---

def _uniform_spacing(x: np.ndarray) -> float:
    if x.size < 2:
        raise ValidationError("need at least two samples")
    dx = np.diff(x)
    step = (x[-1] - x[0]) / (x.size - 1)
    if step <= 0 or np.max(np.abs(dx - step)) > 1e-6 * abs(step):
        raise ValidationError("abscissa is not uniformly spaced; resample onto a uniform grid first")
    return step


def periodogram_arrays(x, y) -> tuple[np.ndarray, np.ndarray]:
    """One-sided power of the mean-subtracted samples.

    Normalized so that the powers sum to sum((y - mean)^2).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    step = _uniform_spacing(x)
    n = y.size
    spec = np.fft.rfft(y - y.mean())
    power = np.abs(spec) ** 2 / n
    weights = np.full(power.size, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return np.fft.rfftfreq(n, step), weights * power


def periodogram(trace: Trace, column: str = "s_minus") -> tuple[np.ndarray, np.ndarray]:
    """Periodogram of one trace column; frequencies in cycles per abscissa unit (Hz)."""
    return periodogram_arrays(trace.x, trace[column])


def spectral_peaks(freqs: np.ndarray, power: np.ndarray, n: int, f_min: float = 0.0) -> list[float]:
    """The ``n`` largest local maxima above ``f_min`` (DC always excluded),
    refined by parabolic interpolation."""
    p = np.asarray(power, dtype=float)
    first = max(1, int(np.searchsorted(freqs, f_min)))
    interior = np.arange(first, p.size - 1)
    is_peak = (p[interior] >= p[interior - 1]) & (p[interior] >= p[interior + 1])
    candidates = interior[is_peak]
    if candidates.size < n:
        extra = [k for k in np.argsort(p[first:])[::-1] + first if k not in set(candidates)]
        candidates = np.concatenate([candidates, extra]).astype(int)
    order = candidates[np.argsort(p[candidates], kind="stable")[::-1]][:n]
    df = freqs[1] - freqs[0]
    out = []
    for k in order:
        if 0 < k < p.size - 1:
            a, b, c = p[k - 1], p[k], p[k + 1]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
            out.append(float(freqs[k] + np.clip(shift, -0.5, 0.5) * df))
        else:
            out.append(float(freqs[k]))
    return out


# --- damped Gauss-Newton engine ---

@dataclass(frozen=True)
class _EngineResult:
    p: np.ndarray
    cost: float
    n_iter: int
    free: np.ndarray
    jac: np.ndarray


def levenberg_marquardt(residual: Callable[[np.ndarray], np.ndarray],
                        jacobian: Callable[[np.ndarray], np.ndarray], p0: Sequence[float],
                        valid: Callable[[np.ndarray], bool] = lambda p: True,
                        max_iter: int = MAX_ITER, ftol: float = 1e-15,
                        xtol: float = 1e-12) -> _EngineResult:
    """Minimize ||residual||^2 with multiplicative Marquardt damping.

    A trial step is kept only if it lowers the objective; the damping grows by
    10 after a rejected step and shrinks by 3 after an accepted one.  Columns of
    the Jacobian that vanish are held fixed.
    """
    p = np.array(p0, dtype=float)
    r = residual(p)
    cost = float(r @ r)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        jac = jacobian(p)
        norms = np.sqrt(np.sum(jac**2, axis=0))
        free = norms > 1e-10 * max(float(norms.max(initial=0.0)), 1e-300)
        if cost == 0.0 or not np.any(free):
            return _EngineResult(p, cost, it, free, jac)
        jf = jac[:, free]
        grad = jf.T @ r
        hess = jf.T @ jf
        diag = np.diag(hess).copy()
        while True:
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = None
            trial_cost = math.inf
            if step is not None and np.all(np.isfinite(step)):
                trial = p.copy()
                trial[free] += step
                if valid(trial):
                    r_trial = residual(trial)
                    trial_cost = float(r_trial @ r_trial)
            if trial_cost < cost:
                small_step = np.all(np.abs(step) <= xtol * (np.abs(p[free]) + xtol))
                small_gain = cost - trial_cost <= ftol * cost
                p, r, cost = trial, r_trial, trial_cost
                lam = max(lam / DAMP_DOWN, 1e-15)
                if small_step or small_gain:
                    return _EngineResult(p, cost, it, free, jacobian(p))
                break
            lam *= DAMP_UP
            if lam > 1e16:
                # no descent direction left: the current point is the minimum
                return _EngineResult(p, cost, it, free, jac)
    raise FitError(f"no convergence after {max_iter} iterations")


def _uncertainties(res: _EngineResult, n_obs: int) -> np.ndarray:
    errors = np.full(res.p.size, math.inf)
    jf = res.jac[:, res.free]
    dof = n_obs - jf.shape[1]
    hess = jf.T @ jf
    if jf.shape[1] == 0:
        return errors
    scale = np.sqrt(np.diag(hess))
    scaled = hess / np.outer(scale, scale)
    if np.linalg.cond(scaled) > 1e14:
        raise FitError("rank-deficient normal equations")
    cov = np.linalg.inv(scaled) / np.outer(scale, scale)
    s2 = res.cost / dof if dof > 0 else math.inf
    errors[res.free] = np.sqrt(np.abs(np.diag(cov)) * s2)
    return errors


# --- decaying cosines ---

def _cosine_parts(p, t, n, beta_fixed):
    a, f, c = p[:n], p[n:2 * n], p[2 * n:3 * n]
    big_t = p[3 * n]
    beta = beta_fixed if beta_fixed is not None else p[3 * n + 1]
    u = (t / big_t) ** beta
    env = np.exp(-u)
    theta = TWO_PI * np.outer(t, f) + c
    return a, f, c, big_t, beta, u, env, theta


def _cosine_model(p, t, n, beta_fixed):
    a, _, _, _, _, _, env, theta = _cosine_parts(p, t, n, beta_fixed)
    return env * (np.cos(theta) @ a) + p[-1]


def _cosine_jac(p, t, n, beta_fixed):
    a, _, _, big_t, beta, u, env, theta = _cosine_parts(p, t, n, beta_fixed)
    cos, sin = np.cos(theta), np.sin(theta)
    osc = cos @ a
    cols = [env[:, None] * cos,
            -(env * TWO_PI * t)[:, None] * sin * a,
            -env[:, None] * sin * a,
            (env * osc * beta * u / big_t)[:, None]]
    if beta_fixed is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            logu = np.where(t > 0, np.log(np.where(t > 0, t, 1.0) / big_t), 0.0)
        cols.append((-env * osc * u * logu)[:, None])
    cols.append(np.ones((t.size, 1)))
    return np.hstack(cols)


def _linear_amplitudes(t, y, freqs):
    basis = np.hstack([np.column_stack([np.cos(TWO_PI * f * t), np.sin(TWO_PI * f * t)]) for f in freqs])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    amps, phases = [], []
    for k in range(len(freqs)):
        ca, sa = coef[2 * k], coef[2 * k + 1]
        amps.append(math.hypot(ca, sa))
        phases.append(math.atan2(-sa, ca))
    return amps, phases


def fit_decaying_cosines(trace: Trace, n_components: int, column: str = "s_minus",
                         hints: dict[str, Sequence[float]] | None = None,
                         fix_beta: bool = True) -> FitResult:
    """Fit exp(-(t/T)^beta) sum_k a_k cos(2 pi f_k t + c_k) + offset.

    Frequencies start at the largest periodogram peaks unless ``hints`` gives
    ``{"freqs": [...]}``.  With ``fix_beta`` the envelope exponent stays at 1.
    Frequencies come back in cycles per abscissa unit.
    """
    if n_components not in (1, 2, 3):
        raise ValidationError("n_components must be 1, 2 or 3")
    x = np.asarray(trace.x, dtype=float)
    y = np.asarray(trace[column], dtype=float)
    if np.any(x < 0):
        raise ValidationError("abscissa must be >= 0")
    n = n_components
    scale = float(np.max(np.abs(x)))
    t = x / scale
    if hints and "freqs" in hints:
        freqs = [float(f) * scale for f in hints["freqs"]]
        if len(freqs) != n:
            raise ValidationError("hinted frequency count differs from n_components")
    else:
        fgrid, power = periodogram_arrays(t, y)
        # slow trends (for example T1 storage decay) are not oscillations: need 1.5 cycles
        freqs = spectral_peaks(fgrid, power, n, f_min=1.5 / (t[-1] - t[0]))
    offset = float(y.mean())
    amps, phases = _linear_amplitudes(t, y - offset, freqs)
    beta_fixed = 1.0 if fix_beta else None
    p0 = list(amps) + list(freqs) + list(phases) + [1.0] + ([] if fix_beta else [1.0]) + [offset]

    def valid(p):
        ok = p[3 * n] > 0
        if not fix_beta:
            ok = ok and 0.3 < p[3 * n + 1] < 4.0
        return bool(ok)

    res = levenberg_marquardt(lambda p: _cosine_model(p, t, n, beta_fixed) - y,
                              lambda p: _cosine_jac(p, t, n, beta_fixed), p0, valid)
    err = _uncertainties(res, y.size)
    p = res.p.copy()
    # canonical sign: positive amplitudes, phases in [0, 2 pi)
    for k in range(n):
        if p[k] < 0:
            p[k] = -p[k]
            p[2 * n + k] += math.pi
        p[2 * n + k] %= TWO_PI
    names = ([f"a{k + 1}" for k in range(n)] + [f"f{k + 1}" for k in range(n)]
             + [f"c{k + 1}" for k in range(n)] + ["T"] + ([] if fix_beta else ["beta"]) + ["offset"])
    unit = ([1.0] * n + [1.0 / scale] * n + [1.0] * n + [scale] + ([] if fix_beta else [1.0]) + [1.0])
    params = {k: float(v * u) for k, v, u in zip(names, p, unit)}
    errors = {k: float(e * u) for k, e, u in zip(names, err, unit)}
    if fix_beta:
        params["beta"], errors["beta"] = 1.0, 0.0
    frozen = tuple(name for name, is_free in zip(names, res.free) if not is_free)
    extras = {}
    if n >= 2 and params["a1"] > 0:
        extras["amplitude_ratio_2_1"] = params["a2"] / params["a1"]
    return FitResult("decaying_cosines", params, errors, float(math.sqrt(res.cost)), True,
                     res.n_iter, frozen, extras)


# --- stretched exponential ---

def _stretched_model(p, t):
    a, g, b, c = p
    return a * np.exp(-((t / g) ** b)) + c


def _stretched_jac(p, t):
    a, g, b, c = p
    u = (t / g) ** b
    env = np.exp(-u)
    with np.errstate(divide="ignore", invalid="ignore"):
        logu = np.where(t > 0, np.log(np.where(t > 0, t, 1.0) / g), 0.0)
    return np.column_stack([env, a * env * b * u / g, -a * env * u * logu, np.ones_like(t)])


def fit_stretched_exp(trace: Trace, column: str = "s_minus") -> FitResult:
    """Fit A exp(-(t/Gamma)^beta) + c with beta kept inside (0.3, 4)."""
    x = np.asarray(trace.x, dtype=float)
    y = np.asarray(trace[column], dtype=float)
    if np.any(x < 0):
        raise ValidationError("abscissa must be >= 0")
    third = max(y.size // 3, 1)
    if not np.mean(y[:third]) > np.mean(y[-third:]):
        warnings.warn("trace does not decay overall; stretched-exponential fit may be meaningless",
                      ResoluteWarning, stacklevel=2)
    scale = float(np.max(np.abs(x)))
    t = x / scale
    tail = max(y.size // 10, 1)
    c0 = float(np.mean(y[-tail:]))
    a0 = float(y[0] - c0)
    g0 = 0.5
    if a0 != 0:
        below = np.nonzero((y - c0) / a0 < math.exp(-1))[0]
        if below.size:
            g0 = max(float(t[below[0]]), float(t[1]) if t.size > 1 else 0.5)

    def valid(p):
        return bool(p[1] > 0 and 0.3 < p[2] < 4.0)

    res = levenberg_marquardt(lambda p: _stretched_model(p, t) - y, lambda p: _stretched_jac(p, t),
                              [a0, g0, 1.0, c0], valid)
    err = _uncertainties(res, y.size)
    names = ("A", "Gamma", "beta", "c")
    unit = (1.0, scale, 1.0, 1.0)
    params = {k: float(v * u) for k, v, u in zip(names, res.p, unit)}
    errors = {k: float(e * u) for k, e, u in zip(names, err, unit)}
    frozen = tuple(name for name, is_free in zip(names, res.free) if not is_free)
    return FitResult("stretched_exp", params, errors, float(math.sqrt(res.cost)), True,
                     res.n_iter, frozen)


# --- maximum-likelihood frequency replicas and the bound report ---

def mle_frequency(counts: np.ndarray, trials: int, amplitude: float, seq: SequenceParams,
                  sensor: SensorParams, omega0: float, n_phi: int = N_PHI_DEFAULT,
                  max_iter: int = 100) -> FitResult:
    """Maximum-likelihood omega from block counts by Fisher scoring.

    ``counts[k, b]`` is the number of |0> outcomes of block ``b`` at phase node
    ``k`` out of ``trials`` single-shot repetitions.  Scoring starts at
    ``omega0`` and halves steps that lower the likelihood.  It stops when the
    step or the likelihood gain becomes negligible; a run that exhausts
    ``max_iter`` comes back with ``converged=False``.
    """
    phi = phi_grid(n_phi)

    def terms(w):
        p, dp = resolute_block_terms(amplitude, w, phi, seq.tau, seq.t_corr, sensor)
        return np.clip(p, 1e-300, 1 - 1e-16), dp

    def loglik(w):
        p, _ = terms(w)
        return float(np.sum(counts * np.log(p) + (trials - counts) * np.log1p(-p)))

    w = float(omega0)
    ll = loglik(w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p, dp = terms(w)
        score = float(np.sum((counts - trials * p) * dp / (p * (1 - p))))
        info = float(trials * np.sum(fisher_single(p, dp)))
        if info <= 0:
            raise FitError("zero Fisher information at the current estimate")
        step = score / info
        while True:
            trial = w + step
            ll_trial = loglik(trial)
            if ll_trial >= ll or abs(step) < 1e-15 * abs(w):
                break
            step *= 0.5
        done = (abs(trial - w) <= 1e-12 * max(abs(w), 1.0)
                or ll_trial - ll <= 1e-14 * max(abs(ll), 1.0))
        w, ll = trial, ll_trial
        if done:
            converged = True
            break
    p, dp = terms(w)
    info = float(trials * np.sum(fisher_single(p, dp)))
    error = 1.0 / math.sqrt(info) if info > 0 else math.inf
    return FitResult("mle_frequency", {"omega": w}, {"omega": error},
                     0.0, converged, it, (), {"log_likelihood": ll})


def frequency_replicas(omega: float, amplitude: float, seq: SequenceParams, sensor: SensorParams,
                       n_sequences: int, n_replicas: int, seed: int = 0,
                       n_phi: int = N_PHI_DEFAULT) -> tuple[list[FitResult], float]:
    """Simulate replica experiments and fit omega in each.

    Each experiment has ``n_sequences`` sequences spread evenly over the phase
    nodes (the tone phase of every sequence is known), one shot per block.
    Returns the fits and the total information i_total of one experiment.
    """
    if n_sequences % n_phi:
        raise ValidationError("n_sequences must be a multiple of n_phi")
    trials = n_sequences // n_phi
    p, _ = resolute_block_terms(amplitude, omega, phi_grid(n_phi), seq.tau, seq.t_corr, sensor)
    fits = []
    for r in range(n_replicas):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        counts = rng.binomial(trials, p)
        fits.append(mle_frequency(counts, trials, amplitude, seq, sensor, omega, n_phi))
    i_total = n_sequences * float(_resolute_fi_grid(amplitude, omega, seq.tau, seq.t_corr, sensor, n_phi))
    return fits, i_total


@dataclass(frozen=True)
class CrbReport:
    n_replicas: int
    mse: float
    mse_err: float
    crb: float
    ratio: float
    passes: bool  # MSE >= CRB within two standard errors of the MSE
    super_efficient: bool
    floor_limited: bool


def crb_report(fits: Sequence[FitResult], i_total: float, truth: float,
               param: str = "omega") -> CrbReport:
    """Compare the replica mean-squared error of ``param`` with 1/i_total."""
    if len(fits) < 50:
        raise ValidationError("crb_report needs at least 50 replicas")
    if i_total <= 0:
        raise ValidationError("i_total must be > 0")
    sq = np.array([(f.params[param] - truth) ** 2 for f in fits])
    mse = float(sq.mean())
    mse_err = float(sq.std(ddof=1) / math.sqrt(sq.size))
    crb = 1.0 / i_total
    floor = (64 * np.finfo(float).eps * max(abs(truth), 1.0)) ** 2
    floor_limited = bool(mse <= floor)
    super_eff = (mse < crb - 2 * mse_err) and not floor_limited
    if super_eff:
        warnings.warn("replica MSE falls below the Cramer-Rao bound", ResoluteWarning, stacklevel=2)
    return CrbReport(len(fits), mse, mse_err, crb, mse / crb, not (mse < crb - 2 * mse_err),
                     super_eff, floor_limited)
