"""Reductions of simulated signals: period, dephasing fit, echo envelope, coherence time."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AnalysisError, DomainError, UsageError
from .fitting import DampedCosine, ExponentialDecay, levenberg_marquardt
from .traces import SignalTrace

__all__ = [
    "SignalTrace", "FitResult", "EchoMeasurement", "CoolingReport", "oscillation_period",
    "fit_damped_oscillation", "fit_envelope_decay", "echo_envelope", "measure_echo",
    "fit_coherence_time", "photons_per_coherence", "cooling_relation",
]

# White noise gives peak/median spectral power ratios of several units on
# traces of a few hundred samples, so a clear line must stand well above that.
PEAK_TO_MEDIAN = 20.0
ZERO_PADDING = 8
DEFAULT_LOWPASS_PERIODS = 2.0
COOLING_BENCHMARK = 30.0  # tau_cool / tau_sc
STDERR_FLOOR = 1e-3  # relative to the median standard error
# a trace whose variance stays below this multiple of its noise variance is noise
NOISE_VARIANCE_RATIO = 2.0
_US = 1e-6


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with 1-sigma errors.

    Times are reported in seconds and frequencies in rad/s.
    """

    params: dict
    sigmas: dict
    residual_rms: float
    converged: bool
    suspicious: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "names": list(self.params),
            "params": {k: float(v) for k, v in self.params.items()},
            "sigmas": {k: float(v) for k, v in self.sigmas.items()},
            "residual_rms": float(self.residual_rms),
            "converged": bool(self.converged),
            "suspicious": bool(self.suspicious),
            "message": self.message,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(frozen=True)
class EchoMeasurement:
    peak_time: float
    amplitude: float
    amplitude_stderr: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class CoolingReport:
    """Energy damping time inferred from the coherence time (tau_cool = tau2 / 2)."""

    coherence_time: float
    inferred_cooling_time: float
    benchmark_cooling_time: float | None = None

    @property
    def benchmark_ratio(self) -> float | None:
        if self.benchmark_cooling_time is None:
            return None
        return self.inferred_cooling_time / self.benchmark_cooling_time


def _spectrum(values: np.ndarray, dt: float):
    n = len(values)
    nfft = ZERO_PADDING * (1 << (n - 1).bit_length())
    power = np.abs(np.fft.rfft(values - values.mean(), nfft)) ** 2
    return np.fft.rfftfreq(nfft, dt), power


def oscillation_period(trace: SignalTrace) -> tuple[float, float]:
    """Dominant period (s) and its 1-sigma uncertainty.

    The peak of the zero-padded spectrum of the mean-subtracted trace is
    refined by a parabola through the three highest bins. The uncertainty is
    the Cramer-Rao bound for a sinusoid in white noise, with the noise level
    taken from the median spectral power.
    """
    v = trace.values
    n = len(v)
    if n < 8:
        raise AnalysisError("trace too short for a period estimate")
    dt = trace.dt
    if np.std(v) <= 1e-12 * max(np.max(np.abs(v)), 1e-300) or np.std(v) == 0:
        raise AnalysisError("trace is constant; no oscillation present")
    err = _effective_stderr(trace.stderr)
    if err is not None and np.var(v) < NOISE_VARIANCE_RATIO * np.mean(err**2):
        raise AnalysisError("signal is consistent with noise; no oscillation present")
    freqs, power = _spectrum(v, dt)
    k = int(np.argmax(power[1:])) + 1
    median = float(np.median(power[1:]))
    if median > 0 and power[k] < PEAK_TO_MEDIAN * median:
        raise AnalysisError(
            f"no dominant spectral peak (peak/median power {power[k] / median:.1f} "
            f"< {PEAK_TO_MEDIAN:g})"
        )
    if 0 < k < len(power) - 1:
        a, b, c = np.log(power[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    f = (k + shift) * (freqs[1] - freqs[0])
    if not f > 0:
        raise AnalysisError("dominant spectral peak at zero frequency")
    period = 1 / f
    if period * 3 > n * dt * (1 + 1e-9):
        raise AnalysisError(
            f"trace spans {n * dt / period:.2f} periods; at least 3 are needed"
        )
    # Cramer-Rao: var(w) = 12 s^2 / (A^2 N (N^2 - 1) dt^2)
    amp2 = 4 * power[k] / n**2
    noise_var = max(median, 1e-300) / (n * math.log(2))
    sigma_w = math.sqrt(12 * noise_var / (amp2 * n * (n * n - 1) * dt * dt))
    sigma = period**2 * sigma_w / (2 * math.pi)
    return period, sigma


def _effective_stderr(stderr: np.ndarray | None):
    """Standard errors with a floor, or None when they carry no information.

    Samples fixed by symmetry can have roundoff-level errors; without a floor
    such a sample would outweigh the rest of the trace.
    """
    if stderr is None:
        return None
    positive = stderr[stderr > 0]
    if len(positive) == 0:
        return None
    return np.maximum(stderr, STDERR_FLOOR * np.median(positive))


def _weights(trace: SignalTrace):
    err = _effective_stderr(trace.stderr)
    return None if err is None else 1.0 / err**2


def _finish(sol, names, scales, n_points, y, weights, absolute_sigma) -> FitResult:
    dof = max(n_points - len(names), 1)
    res_var = sol.cost / dof
    # guard exact fits: keep the sigmas finite and positive at roundoff level
    floor = (1e-13 * max(float(np.sqrt(np.mean(y * y))), 1e-300)) ** 2
    if weights is not None:
        floor *= float(np.mean(weights))
    var_scale = 1.0 if absolute_sigma else max(res_var, floor)
    diag = np.diag(sol.covariance) * var_scale
    sig = np.sqrt(np.where(diag > 0, diag, np.nan))
    params = {k: float(v * s) for k, v, s in zip(names, sol.params, scales)}
    sigmas = {k: float(e * abs(s)) for k, e, s in zip(names, sig, scales)}
    converged = sol.converged and all(math.isfinite(e) and e > 0 for e in sigmas.values())
    return params, sigmas, converged


def _linear_amplitudes(t, y, tau, omega, weights):
    """A, phi, offset minimising the residual at fixed tau and omega."""
    decay = np.exp(-t / tau)
    basis = np.column_stack([decay * np.cos(omega * t), decay * np.sin(omega * t), np.ones_like(t)])
    sw = np.ones_like(y) if weights is None else np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(basis * sw[:, None], y * sw, rcond=None)
    a, b, c = coef
    return math.hypot(a, b), math.atan2(-b, a), c


def fit_damped_oscillation(trace: SignalTrace, period: float | None = None) -> FitResult:
    """Fit A exp(-t/tau1) cos(omega t + phi) + offset by Levenberg-Marquardt.

    Seeds: omega from :func:`oscillation_period` (or ``period``), tau1 from
    the log-slope of the demodulated envelope, then A, phi and offset by
    linear least squares at those values. ``t`` is measured from the
    trace's first sample; A and phi refer to that origin.
    """
    if period is None:
        period, _ = oscillation_period(trace)
    t0 = trace.times[0]
    t = (trace.times - t0) / _US
    y = trace.values
    omega = 2 * math.pi / (period / _US)
    span = t[-1]
    env = echo_envelope(trace, omega / _US, 1.0).values
    ta, tb = period / _US, 0.5 * span
    ea, eb = np.interp(ta, t, env), np.interp(tb, t, env)
    if ea > 0 and eb > 0 and ea > eb:
        tau = (tb - ta) / math.log(ea / eb)
    else:
        tau = 10 * span
    tau = min(max(tau, 0.05 * span), 100 * span)
    weights = _weights(trace)
    amp, phi, offset = _linear_amplitudes(t, y, tau, omega, weights)
    sol = levenberg_marquardt(DampedCosine, t, y, [amp, tau, omega, phi, offset], weights)
    p = sol.params.copy()
    if p[0] < 0:  # canonical sign: positive amplitude
        p[0], p[3] = -p[0], p[3] + math.pi
    p[3] = (p[3] + math.pi) % (2 * math.pi) - math.pi
    sol = type(sol)(p, sol.covariance, sol.cost, sol.converged, sol.iterations, sol.message)
    names = ("A", "tau1", "omega", "phi", "offset")
    scales = (1.0, _US, 1 / _US, 1.0, 1.0)
    params, sigmas, converged = _finish(sol, names, scales, len(y), y, weights,
                                        absolute_sigma=weights is not None)
    resid = y - DampedCosine.value(t, sol.params)
    converged = converged and params["tau1"] > 0
    return FitResult(params, sigmas, float(np.sqrt(np.mean(resid**2))), converged,
                     message=sol.message)


def _lowpass_matrix(times: np.ndarray, sigma: float) -> np.ndarray:
    """Row-normalised Gaussian smoothing weights (renormalised at the edges)."""
    d = times[:, None] - times[None, :]
    w = np.exp(-0.5 * (d / sigma) ** 2)
    return w / w.sum(axis=1, keepdims=True)


def _demodulate(trace: SignalTrace, omega: float, width_periods: float):
    if not omega > 0:
        raise UsageError("demodulation frequency must be positive")
    sigma = width_periods * 2 * math.pi / omega
    w = _lowpass_matrix(trace.times, sigma) * np.exp(-1j * omega * trace.times)[None, :]
    return w, w @ trace.values


def echo_envelope(echo_curve: SignalTrace, omega: float,
                  width_periods: float = DEFAULT_LOWPASS_PERIODS) -> SignalTrace:
    """Envelope 2 |lowpass(x(t) exp(-i omega t))| of an oscillating trace.

    The lowpass is Gaussian with a standard deviation of ``width_periods``
    oscillation periods. Standard errors of the input, if present, are
    propagated linearly.
    """
    w, z = _demodulate(echo_curve, omega, width_periods)
    env = 2 * np.abs(z)
    err = None
    if echo_curve.stderr is not None:
        mag = np.abs(z)
        phase = np.where(mag > 0, np.conj(z) / np.where(mag > 0, mag, 1), 1 / math.sqrt(2))
        grad = 2 * np.real(phase[:, None] * w)
        err = np.sqrt((grad**2) @ echo_curve.stderr**2)
    return SignalTrace(echo_curve.times, env, err)


def fit_envelope_decay(trace: SignalTrace, omega: float,
                       width_periods: float = 0.5, skip_periods: float = 1.0) -> FitResult:
    """Cross-check for tau1: exponential fit to the demodulated envelope.

    ``skip_periods`` periods are dropped at both ends, where the lowpass
    window is cut off by the trace edges.
    """
    env = echo_envelope(trace, omega, width_periods)
    margin = skip_periods * 2 * math.pi / omega
    start = trace.times[0] + margin
    sel = (env.times >= start) & (env.times <= trace.times[-1] - margin)
    x = (env.times[sel] - start) / _US
    y = env.values[sel]
    if len(x) < 3 or np.any(y <= 0):
        raise AnalysisError("envelope unsuitable for an exponential fit")
    slope, intercept = np.polyfit(x, np.log(y), 1)
    tau = -1 / slope if slope < 0 else 10 * x[-1]
    sol = levenberg_marquardt(ExponentialDecay, x, y, [math.exp(intercept), tau])
    params, sigmas, converged = _finish(sol, ("A", "tau1"), (1.0, _US), len(y), y, None, False)
    resid = y - ExponentialDecay.value(x, sol.params)
    return FitResult(params, sigmas, float(np.sqrt(np.mean(resid**2))), converged,
                     message=sol.message)


def measure_echo(echo_curve: SignalTrace, omega: float, expected_time: float,
                 width_periods: float = DEFAULT_LOWPASS_PERIODS,
                 search_periods: float = 2.0) -> EchoMeasurement:
    """Envelope maximum within ``search_periods`` periods of ``expected_time``.

    The curve's mean is removed first, so a constant offset does not move
    the peak.
    """
    t = echo_curve.times
    if not t[0] <= expected_time <= t[-1]:
        raise UsageError(f"expected echo time {expected_time:.3g} s lies outside the trace")
    centred = SignalTrace(t, echo_curve.values - echo_curve.values.mean(), echo_curve.stderr)
    env = echo_envelope(centred, omega, width_periods)
    period = 2 * math.pi / omega
    window = np.nonzero(np.abs(t - expected_time) <= search_periods * period)[0]
    if len(window) == 0:
        raise UsageError("echo search window contains no samples")
    k = window[int(np.argmax(env.values[window]))]
    err = float(env.stderr[k]) if env.stderr is not None else 0.0
    return EchoMeasurement(float(t[k]), float(env.values[k]), err)


def fit_coherence_time(measurements) -> FitResult:
    """Weighted fit of A0 exp(-x/tau2) to (x = 2 delta_t, amplitude, stderr) triples.

    ``suspicious`` is set when the amplitudes do not decrease with x or the
    fitted decay rate is not positive.
    """
    data = np.array([(float(x), float(a), float(e)) for x, a, e in measurements])
    if data.ndim != 2 or len(data) < 4:
        raise UsageError("coherence-time fit needs at least 4 points")
    data = data[np.argsort(data[:, 0])]
    x, a, e = data.T
    if np.any(a <= 0):
        raise UsageError("coherence-time fit needs positive amplitudes")
    weights = 1 / e**2 if np.all(e > 0) else None
    xs = x / _US
    slope, intercept = np.polyfit(xs, np.log(a), 1, w=None if weights is None else a / e)
    tau = -1 / slope if slope < 0 else 10 * (xs[-1] - xs[0] + xs[-1])
    sol = levenberg_marquardt(ExponentialDecay, xs, a, [math.exp(intercept), tau], weights)
    params, sigmas, converged = _finish(sol, ("A0", "tau2"), (1.0, _US), len(a), a, weights,
                                        absolute_sigma=weights is not None)
    resid = a - ExponentialDecay.value(xs, sol.params)
    suspicious = bool(np.all(np.diff(a) >= 0) or params["tau2"] <= 0)
    return FitResult(params, sigmas, float(np.sqrt(np.mean(resid**2))),
                     converged and params["tau2"] > 0, suspicious, sol.message)


def photons_per_coherence(coherence_time: float, scattering_time: float) -> float:
    """Photons scattered per atom within one coherence time, tau2 / tau_sc."""
    if not (coherence_time > 0 and scattering_time > 0):
        raise DomainError("coherence and scattering times must be positive")
    return coherence_time / scattering_time


def cooling_relation(coherence_time: float, scattering_time: float | None = None) -> CoolingReport:
    """tau_cool = tau2 / 2, compared with the 30 tau_sc benchmark when tau_sc is given."""
    if not coherence_time > 0:
        raise DomainError("coherence time must be positive")
    bench = None
    if scattering_time is not None:
        if not scattering_time > 0:
            raise DomainError("scattering time must be positive")
        bench = COOLING_BENCHMARK * scattering_time
    return CoolingReport(coherence_time, coherence_time / 2, bench)
