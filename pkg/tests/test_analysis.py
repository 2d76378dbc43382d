import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wpecho.analysis import (
    COOLING_BENCHMARK,
    cooling_relation,
    echo_envelope,
    fit_coherence_time,
    fit_damped_oscillation,
    fit_envelope_decay,
    measure_echo,
    oscillation_period,
    photons_per_coherence,
)
from wpecho.errors import AnalysisError, DomainError, UsageError
from wpecho.fitting import DampedCosine, ExponentialDecay, jacobian_check, levenberg_marquardt
from wpecho.traces import SignalTrace

DT = 0.2e-6
PERIOD = 5.2e-6
OMEGA = 2 * math.pi / PERIOD


def _times(t_end=30e-6):
    return np.arange(int(round(t_end / DT)) + 1) * DT


def _damped(t, amp=0.8, tau=7e-6, phi=0.3, offset=0.05):
    return amp * np.exp(-t / tau) * np.cos(OMEGA * t + phi) + offset


class TestTraces:
    def test_rejects_uneven_sampling(self):
        with pytest.raises(UsageError):
            SignalTrace(np.array([0, 1, 3.0]), np.zeros(3))

    def test_difference_combines_errors(self):
        t = _times(1e-6)
        a = SignalTrace(t, np.ones_like(t), np.full_like(t, 0.3))
        b = SignalTrace(t, np.zeros_like(t), np.full_like(t, 0.4))
        d = a - b
        np.testing.assert_allclose(d.stderr, 0.5)

    def test_window(self):
        w = SignalTrace(_times(), np.zeros(151)).window(2e-6, 4e-6)
        assert len(w) == 11


class TestPeriod:
    def test_clean_sinusoid(self):
        t = _times()
        period, sigma = oscillation_period(SignalTrace(t, np.cos(OMEGA * t)))
        assert period == pytest.approx(PERIOD, rel=0.02)
        assert sigma > 0

    def test_damped_noisy_sinusoid(self):
        t = _times()
        rng = np.random.default_rng(1)
        y = _damped(t) + rng.normal(0, 0.01, len(t))
        period, _ = oscillation_period(SignalTrace(t, y, np.full(len(t), 0.01)))
        assert period == pytest.approx(PERIOD, rel=0.02)

    def test_pure_noise_is_rejected(self):
        t = _times()
        rng = np.random.default_rng(2)
        with pytest.raises(AnalysisError):
            oscillation_period(SignalTrace(t, rng.normal(0, 0.01, len(t)), np.full(len(t), 0.01)))

    def test_noise_without_errors_has_no_dominant_peak(self):
        rng = np.random.default_rng(3)
        with pytest.raises(AnalysisError, match="peak"):
            oscillation_period(SignalTrace(_times(), rng.normal(0, 1, 151)))

    def test_constant_trace(self):
        with pytest.raises(AnalysisError, match="constant"):
            oscillation_period(SignalTrace(_times(), np.full(151, 0.4)))

    def test_needs_three_periods(self):
        t = _times(10e-6)
        with pytest.raises(AnalysisError, match="periods"):
            oscillation_period(SignalTrace(t, np.cos(OMEGA * t)))


class TestDampedFit:
    def test_noiseless_recovery(self):
        t = _times()
        fit = fit_damped_oscillation(SignalTrace(t, _damped(t)))
        assert fit.converged
        expected = {"A": 0.8, "tau1": 7e-6, "omega": OMEGA, "phi": 0.3, "offset": 0.05}
        for name, value in expected.items():
            assert fit.params[name] == pytest.approx(value, rel=1e-6, abs=1e-9)

    def test_noisy_recovery(self):
        t = _times()
        rng = np.random.default_rng(4)
        y = _damped(t) + rng.normal(0, 0.008, len(t))
        fit = fit_damped_oscillation(SignalTrace(t, y, np.full(len(t), 0.008)))
        assert fit.converged
        assert fit.params["tau1"] == pytest.approx(7e-6, rel=0.05)
        assert fit.params["omega"] == pytest.approx(OMEGA, rel=0.05)
        assert abs(fit.params["tau1"] - 7e-6) < 4 * fit.sigmas["tau1"]

    def test_negative_amplitude_is_canonicalised(self):
        t = _times()
        fit = fit_damped_oscillation(SignalTrace(t, -_damped(t, offset=0.0)))
        assert fit.params["A"] > 0
        assert -math.pi <= fit.params["phi"] < math.pi

    def test_serialisation(self):
        t = _times()
        d = fit_damped_oscillation(SignalTrace(t, _damped(t))).to_dict()
        assert d["names"] == ["A", "tau1", "omega", "phi", "offset"]

    def test_envelope_cross_check(self):
        t = _times()
        fit = fit_envelope_decay(SignalTrace(t, _damped(t, offset=0.0)), OMEGA)
        assert fit.params["tau1"] == pytest.approx(7e-6, rel=0.02)


class TestLevenbergMarquardt:
    @pytest.mark.parametrize("model,p", [
        (DampedCosine, [0.7, 6.0, 1.2, 0.4, 0.1]),
        (ExponentialDecay, [1.3, 12.0]),
    ])
    def test_jacobians(self, model, p):
        x = np.linspace(0, 30, 151)
        assert jacobian_check(model, x, np.array(p)) < 1e-4

    def test_covariance_matches_scatter(self):
        x = np.linspace(0, 60, 40)
        rng = np.random.default_rng(8)
        taus = []
        for _ in range(200):
            y = ExponentialDecay.value(x, [1.0, 20.0]) + rng.normal(0, 0.02, len(x))
            sol = levenberg_marquardt(ExponentialDecay, x, y, [0.8, 10.0],
                                      np.full(len(x), 1 / 0.02**2))
            taus.append(sol.params[1])
        sigma = math.sqrt(sol.covariance[1, 1])
        assert np.std(taus) == pytest.approx(sigma, rel=0.2)


class TestEnvelope:
    def test_constant_amplitude(self):
        t = _times(60e-6)
        env = echo_envelope(SignalTrace(t, 0.4 * np.cos(OMEGA * t + 1.0)), OMEGA)
        middle = env.window(20e-6, 40e-6).values
        np.testing.assert_allclose(middle, 0.4, rtol=0.03)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
    def test_scales_with_amplitude(self, c):
        t = _times()
        y = _damped(t, offset=0.0)
        a = echo_envelope(SignalTrace(t, y), OMEGA).values
        b = echo_envelope(SignalTrace(t, c * y), OMEGA).values
        np.testing.assert_allclose(b, abs(c) * a, rtol=1e-9, atol=1e-15)

    def test_error_propagation_is_linear(self):
        t = _times()
        y = 0.3 * np.cos(OMEGA * t)
        a = echo_envelope(SignalTrace(t, y, np.full(len(t), 0.01)), OMEGA).stderr
        b = echo_envelope(SignalTrace(t, y, np.full(len(t), 0.02)), OMEGA).stderr
        np.testing.assert_allclose(b, 2 * a)


class TestMeasureEcho:
    def _echo(self, t, center=32e-6, width=4e-6, amp=0.2):
        return amp * np.exp(-0.5 * ((t - center) / width) ** 2) * np.cos(OMEGA * (t - center))

    def test_finds_peak(self):
        t = _times(62e-6)
        m = measure_echo(SignalTrace(t, self._echo(t)), OMEGA, 32e-6)
        assert m.peak_time == pytest.approx(32e-6, abs=PERIOD / 4)
        # a Gaussian lowpass of width s turns a Gaussian envelope of width w
        # into one of width sqrt(w^2 + s^2) with the same area
        s = 2 * PERIOD
        assert m.amplitude == pytest.approx(0.2 * 4e-6 / math.hypot(4e-6, s), rel=0.03)

    def test_offset_invariance(self):
        t = _times(62e-6)
        a = measure_echo(SignalTrace(t, self._echo(t)), OMEGA, 32e-6)
        b = measure_echo(SignalTrace(t, self._echo(t) + 0.37), OMEGA, 32e-6)
        assert a.peak_time == b.peak_time
        assert a.amplitude == pytest.approx(b.amplitude, rel=1e-9)

    def test_expected_time_outside_trace(self):
        t = _times(20e-6)
        with pytest.raises(UsageError):
            measure_echo(SignalTrace(t, self._echo(t)), OMEGA, 40e-6)


class TestCoherenceTime:
    x = np.array([24, 40, 56, 72, 88]) * 1e-6

    def _points(self, tau2=14e-6, a0=0.9, noise=0.0, seed=0):
        rng = np.random.default_rng(seed)
        a = a0 * np.exp(-self.x / tau2)
        err = np.maximum(0.02 * a, 1e-4)
        return [(x, v + noise * e * rng.normal(), e) for x, v, e in zip(self.x, a, err)]

    def test_exact_recovery(self):
        fit = fit_coherence_time(self._points())
        assert fit.params["tau2"] == pytest.approx(14e-6, rel=1e-6)
        assert not fit.suspicious

    def test_noisy_recovery(self):
        fit = fit_coherence_time(self._points(noise=1.0, seed=5))
        assert fit.params["tau2"] == pytest.approx(14e-6, rel=0.1)
        assert fit.converged

    @settings(max_examples=20, deadline=None)
    @given(st.floats(1e-3, 1e3))
    def test_amplitude_scale_does_not_move_tau(self, c):
        base = fit_coherence_time(self._points(noise=1.0, seed=2))
        scaled = fit_coherence_time([(x, c * a, c * e) for x, a, e in self._points(noise=1.0, seed=2)])
        assert scaled.params["tau2"] == pytest.approx(base.params["tau2"], rel=1e-6)

    def test_rising_amplitudes_are_suspicious(self):
        rising = [(x, 0.1 + 0.01 * i, 0.01) for i, x in enumerate(self.x)]
        assert fit_coherence_time(rising).suspicious

    def test_input_validation(self):
        with pytest.raises(UsageError):
            fit_coherence_time(self._points()[:3])
        with pytest.raises(UsageError):
            fit_coherence_time([(x, -a, e) for x, a, e in self._points()])


def test_photon_count():
    assert photons_per_coherence(27e-6, 0.4e-6) == pytest.approx(67.5)
    with pytest.raises(DomainError):
        photons_per_coherence(0.0, 0.4e-6)


def test_cooling_relation():
    report = cooling_relation(49 * 0.4e-6, 0.4e-6)
    assert report.inferred_cooling_time == pytest.approx(24.5 * 0.4e-6)
    assert report.benchmark_ratio == pytest.approx(24.5 / COOLING_BENCHMARK)
    assert cooling_relation(1e-6).benchmark_ratio is None
