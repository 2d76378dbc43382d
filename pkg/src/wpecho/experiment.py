"""Shift protocols end to end: state preparation, oscillation, echo and scan runs."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .analysis import fit_coherence_time, measure_echo, oscillation_period
from .dynamics import (
    EnsembleResult,
    ShiftProtocol,
    _DepthSampler,
    evolve_mixture,
    observable,
    observable_values,
    run_ensemble,
)
from .errors import AnalysisError, ConfigurationError, EchoError, UsageError
from .grid import Grid, WaveFunction
from .lattice import RB85, AtomSpecies, LatticeParams, derived_scales, dephasing_spread, osc_frequency
from .spectral import EigenSystem, solve_eigensystem
from .traces import SignalTrace

__all__ = [
    "ShiftProtocol", "InitialStateSpec", "ThermalMixture", "StatePreparer", "EchoRunResult",
    "OscillationResult", "DetuningPoint", "prepare_initial_state", "temperature_for_width",
    "observable", "run_oscillation", "run_echo", "scan_delays", "scan_detuning", "echo_frequency",
    "measure_scan",
]

log = logging.getLogger(__name__)

DEFAULT_REFERENCE_DELAY = 108e-6
DEFAULT_RECORD_TAIL = 30e-6
DEFAULT_RMS_WIDTH = 1 / 18
MAX_UNBOUND_WEIGHT = 0.20
_NEGLIGIBLE_WEIGHT = 1e-12


@dataclass(frozen=True)
class InitialStateSpec:
    """How atoms are distributed over the eigenstates of the unshifted lattice.

    ``kind="ground"`` puts every atom into the lowest state. ``kind="thermal"``
    uses Boltzmann weights at ``temperature`` (k_B T in E_R); when the
    temperature is omitted it is chosen so the mixture's RMS distance from
    the well centre equals ``rms_width`` (wavelengths). ``mixture`` selects
    between drawing one eigenstate per trajectory ("sampled") and propagating
    every eigenstate once with its weight ("weighted", coherent runs only).
    """

    kind: str = "thermal"
    temperature: float | None = None
    rms_width: float = DEFAULT_RMS_WIDTH
    mixture: str = "sampled"

    def __post_init__(self):
        if self.kind not in ("ground", "thermal"):
            raise ConfigurationError(f"initial state kind must be 'ground' or 'thermal', got {self.kind!r}")
        if self.mixture not in ("sampled", "weighted"):
            raise ConfigurationError(f"mixture must be 'sampled' or 'weighted', got {self.mixture!r}")
        if self.temperature is not None and not self.temperature >= 0:
            raise ConfigurationError(f"temperature must be >= 0 E_R, got {self.temperature!r}")
        if not 0 < self.rms_width < 0.25:
            raise ConfigurationError(f"rms_width must lie in (0, 0.25) lambda, got {self.rms_width!r}")


@dataclass(frozen=True)
class ThermalMixture:
    """Eigenstates with Boltzmann weights, realised by sampling per trajectory."""

    eigensystem: EigenSystem = field(repr=False)
    weights: np.ndarray
    temperature: float

    def sample(self, rng: np.random.Generator) -> WaveFunction:
        n = rng.choice(len(self.weights), p=self.weights)
        return self.eigensystem.state(int(n))

    @property
    def unbound_weight(self) -> float:
        return float(self.weights[self.eigensystem.energies >= 0].sum())

    def expectation(self, values: np.ndarray) -> float:
        return float(self.weights @ values)


def boltzmann_weights(energies_recoil: np.ndarray, temperature: float) -> np.ndarray:
    e = np.asarray(energies_recoil, dtype=float)
    if temperature == 0:
        w = (e == e.min()).astype(float)
    else:
        w = np.exp(-(e - e.min()) / temperature)
    return w / w.sum()


def _state_spreads(eigensystem: EigenSystem) -> np.ndarray:
    return np.array([eigensystem.state(n).position_spread() for n in range(len(eigensystem))])


def temperature_for_width(eigensystem: EigenSystem, rms_width: float) -> float:
    """k_B T (E_R) at which the thermal mixture has RMS well offset ``rms_width`` (lambda)."""
    var = _state_spreads(eigensystem) ** 2
    e = eigensystem.energies_recoil
    target = rms_width**2
    if target <= var[0]:
        raise ConfigurationError(
            f"rms_width {rms_width:.4g} lambda is narrower than the ground state "
            f"({math.sqrt(var[0]):.4g} lambda)"
        )

    def excess(t):
        return boltzmann_weights(e, t) @ var - target

    hi = float(e.max() - e.min())
    if excess(hi) < 0:
        raise ConfigurationError(f"rms_width {rms_width:.4g} lambda is not reachable by bound states")
    return brentq(excess, 1e-9, hi, xtol=1e-10)


def prepare_initial_state(spec: InitialStateSpec, eigensystem: EigenSystem):
    """Ground state, or the Boltzmann mixture over ``eigensystem``.

    The eigensystem must belong to the unshifted lattice. Returns a
    :class:`WaveFunction` for ``kind="ground"`` and a :class:`ThermalMixture`
    otherwise.
    """
    if eigensystem.shift != 0:
        raise UsageError("initial states are defined in the unshifted lattice")
    if spec.kind == "ground":
        return eigensystem.state(0)
    temperature = spec.temperature
    if temperature is None:
        temperature = temperature_for_width(eigensystem, spec.rms_width)
    mixture = ThermalMixture(eigensystem,
                             boltzmann_weights(eigensystem.energies_recoil, temperature),
                             temperature)
    if mixture.unbound_weight > MAX_UNBOUND_WEIGHT:
        raise ConfigurationError(
            f"k_B T = {temperature:.4g} E_R puts {mixture.unbound_weight:.1%} of the atoms "
            f"into unbound states (limit {MAX_UNBOUND_WEIGHT:.0%})"
        )
    return mixture


class StatePreparer:
    """Picklable ``preparer(depth, rng)`` drawing initial states for trajectories.

    For thermal states without an explicit temperature, the temperature is
    fixed once from ``rms_width`` at the nominal depth and reused at every
    sampled depth.
    """

    def __init__(self, spec: InitialStateSpec, params: LatticeParams, grid: Grid,
                 species: AtomSpecies = RB85):
        self.spec, self.params, self.grid, self.species = spec, params, grid, species
        self._cache = {}
        self.temperature = None
        if spec.kind == "thermal":
            self.temperature = self.prepared(params.depth).temperature

    def eigensystem(self, depth: float) -> EigenSystem:
        if depth not in self._cache:
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[depth] = solve_eigensystem(self.params.replace(depth=depth), 0.0,
                                                   self.grid, species=self.species)
        return self._cache[depth]

    def prepared(self, depth: float):
        es = self.eigensystem(depth)
        spec = self.spec
        if spec.kind == "thermal" and self.temperature is not None:
            spec = InitialStateSpec("thermal", self.temperature, spec.rms_width, spec.mixture)
        return prepare_initial_state(spec, es)

    def __call__(self, depth: float, rng: np.random.Generator) -> WaveFunction:
        state = self.prepared(depth)
        if isinstance(state, ThermalMixture):
            return state.sample(rng)
        return state

    def __getstate__(self):
        # eigensystems are cheap to rebuild; do not ship them to workers
        return {k: v for k, v in self.__dict__.items() if k != "_cache"}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._cache = {}


@dataclass(frozen=True)
class OscillationResult:
    """Signal after a single lattice translation at t = 0."""

    trace: SignalTrace
    normalization: float
    mean_jumps: float
    ensemble: EnsembleResult | None = field(default=None, repr=False)


@dataclass(frozen=True)
class EchoRunResult:
    """Echo run, long-delay reference run and their difference on one clock.

    ``normalization`` converts signals to units of the first oscillation
    maximum; traces are stored unscaled.
    """

    signal_trace: SignalTrace
    reference_trace: SignalTrace
    echo_curve: SignalTrace
    delta_t: float
    reference_delay: float
    normalization: float
    mean_jumps: float = 0.0


@dataclass(frozen=True)
class DetuningPoint:
    detuning: float
    scattering_time: float
    coherence_time: float | None
    coherence_sigma: float | None
    ratio: float | None
    fit: object = field(default=None, repr=False)
    measurements: tuple = field(default=(), repr=False)
    runs: tuple = field(default=(), repr=False)
    error: str | None = None


@dataclass(frozen=True)
class _RunSettings:
    params: LatticeParams
    spec: InitialStateSpec
    scattering_scale: float
    n_traj: int
    seed: int
    grid: Grid
    species: AtomSpecies
    rate_mode: str
    observable_mode: str
    workers: int | None
    output_dt: float


def _first_maximum(preparer: StatePreparer, params: LatticeParams, mode: str) -> float:
    """1 / |signal| right after the first translation, averaged over the initial mixture."""
    if params.shift == 0:
        return 1.0
    state = preparer.prepared(params.depth)
    if isinstance(state, ThermalMixture):
        es = state.eigensystem
        per_state = observable_values(np.abs(es.states) ** 2, es.grid.x, params.shift, mode)
        value = state.expectation(per_state)
    else:
        value = observable(state, params.shift, mode)
    return 1.0 / abs(value) if value != 0 else 1.0


def _run(settings: _RunSettings, protocol: ShiftProtocol, preparer: StatePreparer,
         z_offset: float | None = None):
    """Returns (mean trace, per-trajectory signals or None, mean jump count)."""
    s = settings
    if s.spec.mixture == "weighted":
        if s.scattering_scale > 0 or s.params.depth_spread > 0:
            raise ConfigurationError(
                "weighted mixtures are exact only without scattering and depth spread; "
                "use mixture='sampled'"
            )
        state = preparer.prepared(s.params.depth)
        if isinstance(state, ThermalMixture):
            keep = state.weights > _NEGLIGIBLE_WEIGHT
            states, weights = state.eigensystem.states[keep], state.weights[keep]
        else:
            states, weights = state.amplitudes[None, :], np.ones(1)
        trace = evolve_mixture(states, weights, s.params, protocol, s.grid, species=s.species,
                               observable_mode=s.observable_mode, z_offset=z_offset)
        return trace, None, 0.0
    ens = run_ensemble(s.n_traj, s.seed, s.params, protocol, s.scattering_scale, preparer,
                       _DepthSampler(s.params.depth, s.params.depth_spread), grid=s.grid,
                       species=s.species, rate_mode=s.rate_mode,
                       observable_mode=s.observable_mode, z_offset=z_offset,
                       workers=s.workers)
    good = np.ones(len(ens.signals), dtype=bool)
    good[list(ens.failed)] = False
    return ens.trace, ens.signals[good], ens.mean_jumps


def _settings(params, spec, scattering_scale, n_traj, seed, grid, species, rate_mode,
              observable_mode, workers, output_dt):
    if spec is None:
        spec = InitialStateSpec()
    grid = Grid() if grid is None else grid
    return _RunSettings(params, spec, scattering_scale, n_traj, seed, grid, species,
                        rate_mode, observable_mode, workers, output_dt)


def run_oscillation(params: LatticeParams = LatticeParams(), spec: InitialStateSpec | None = None,
                    scattering_scale: float = 0.0, n_traj: int = 64, seed: int = 0, *,
                    t_end: float = DEFAULT_RECORD_TAIL, grid: Grid | None = None,
                    species: AtomSpecies = RB85, rate_mode: str = "weighted",
                    observable_mode: str = "redistribution", workers: int | None = 1,
                    output_dt: float = 0.2e-6, z_offset: float = 0.0) -> OscillationResult:
    """Translate the lattice by ``params.shift`` at t = 0 and record until ``t_end``.

    The observable is taken relative to ``z_offset`` (wavelengths), by
    default the centre of the original, unshifted well.
    """
    s = _settings(params, spec, scattering_scale, n_traj, seed, grid, species, rate_mode,
                  observable_mode, workers, output_dt)
    preparer = StatePreparer(s.spec, params, s.grid, species)
    protocol = ShiftProtocol(((0.0, params.shift),), 0.0, t_end, output_dt)
    trace, _, jumps = _run(s, protocol, preparer, z_offset)
    return OscillationResult(trace, _first_maximum(preparer, params, observable_mode), jumps)


def _echo_protocol(delay: float, shift: float, t_end: float, output_dt: float) -> ShiftProtocol:
    return ShiftProtocol(((-delay, shift), (0.0, 0.0)), 0.0, t_end, output_dt, t_start=-delay)


def _difference(signal: SignalTrace, reference: SignalTrace, sig_rows, ref_rows) -> SignalTrace:
    if sig_rows is None or ref_rows is None or len(sig_rows) != len(ref_rows):
        return signal - reference
    diff = sig_rows - ref_rows
    n = len(diff)
    err = diff.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(diff.shape[1])
    return SignalTrace(signal.times, diff.mean(axis=0), err)


def _check_reference_delay(params: LatticeParams, reference_delay: float, species) -> None:
    if params.depth <= 0:
        return
    try:
        tau1 = 1 / dephasing_spread(osc_frequency(params.depth, species), species)
    except EchoError:
        return
    if reference_delay <= 3 * tau1:
        warnings.warn(
            f"reference delay {reference_delay * 1e6:.1f} us is within 3 dephasing times "
            f"({3 * tau1 * 1e6:.1f} us); the reference may retain coherence",
            RuntimeWarning, stacklevel=3,
        )


def _echo_runs(delays, s: _RunSettings, reference_delay, t_end):
    if not delays:
        raise UsageError("delay list is empty")
    if any(d <= 0 for d in delays):
        raise UsageError("echo delays must be positive")
    if any(b <= a for a, b in zip(delays, delays[1:])):
        raise UsageError("echo delays must be strictly ascending")
    _check_reference_delay(s.params, reference_delay, s.species)
    preparer = StatePreparer(s.spec, s.params, s.grid, s.species)
    norm = _first_maximum(preparer, s.params, s.observable_mode)
    ref_trace, ref_rows, ref_jumps = _run(
        s, _echo_protocol(reference_delay, s.params.shift, t_end, s.output_dt), preparer, 0.0)
    results = []
    for delay in delays:
        if delay == reference_delay:
            sig_trace, sig_rows, jumps = ref_trace, ref_rows, ref_jumps
        else:
            sig_trace, sig_rows, jumps = _run(
                s, _echo_protocol(delay, s.params.shift, t_end, s.output_dt), preparer, 0.0)
        echo = _difference(sig_trace, ref_trace, sig_rows, ref_rows)
        results.append((delay, EchoRunResult(sig_trace, ref_trace, echo, delay, reference_delay,
                                             norm, jumps)))
    return results


def run_echo(delta_t: float, params: LatticeParams = LatticeParams(),
             spec: InitialStateSpec | None = None, scattering_scale: float = 1.0,
             n_traj: int = 200, seed: int = 0, *,
             reference_delay: float = DEFAULT_REFERENCE_DELAY, t_end: float | None = None,
             grid: Grid | None = None, species: AtomSpecies = RB85,
             rate_mode: str = "weighted", observable_mode: str = "redistribution",
             workers: int | None = 1, output_dt: float = 0.2e-6) -> EchoRunResult:
    """Two-shift echo run and its long-delay reference.

    The lattice moves to ``params.shift`` at t = -delta_t and back at t = 0;
    the reference repeats this with ``reference_delay``. Both use the same
    trajectory seeds and are recorded on [0, t_end] (default delta_t + 30 us).
    """
    if t_end is None:
        t_end = delta_t + DEFAULT_RECORD_TAIL
    s = _settings(params, spec, scattering_scale, n_traj, seed, grid, species, rate_mode,
                  observable_mode, workers, output_dt)
    return _echo_runs([delta_t], s, reference_delay, t_end)[0][1]


def scan_delays(delays, params: LatticeParams = LatticeParams(),
                spec: InitialStateSpec | None = None, scattering_scale: float = 1.0,
                n_traj: int = 200, seed: int = 0, *,
                reference_delay: float = DEFAULT_REFERENCE_DELAY, t_end: float | None = None,
                grid: Grid | None = None, species: AtomSpecies = RB85,
                rate_mode: str = "weighted", observable_mode: str = "redistribution",
                workers: int | None = 1, output_dt: float = 0.2e-6):
    """Echo runs for ascending ``delays`` sharing one reference run.

    Every run is recorded until max(delays) + 30 us unless ``t_end`` is given.
    """
    delays = [float(d) for d in delays]
    if t_end is None and delays:
        t_end = max(delays) + DEFAULT_RECORD_TAIL
    s = _settings(params, spec, scattering_scale, n_traj, seed, grid, species, rate_mode,
                  observable_mode, workers, output_dt)
    return _echo_runs(delays, s, reference_delay, t_end)


def echo_frequency(result: EchoRunResult, params: LatticeParams,
                   species: AtomSpecies = RB85) -> float:
    """Oscillation frequency (rad/s) for demodulating an echo curve.

    Measured from the reference trace, which rings strongly right after the
    second translation; falls back to the closed-form estimate.
    """
    try:
        period, _ = oscillation_period(result.reference_trace.window(0.0, 20e-6))
        return 2 * math.pi / period
    except AnalysisError:
        return osc_frequency(params.depth, species)


def measure_scan(scan, params: LatticeParams, species: AtomSpecies = RB85):
    """EchoMeasurement for every (delay, EchoRunResult) pair of a delay scan."""
    return [measure_echo(r.echo_curve, echo_frequency(r, params, species), delay)
            for delay, r in scan]


def scan_detuning(detunings, delays, params: LatticeParams = LatticeParams(),
                  spec: InitialStateSpec | None = None, scattering_scale: float = 1.0,
                  n_traj: int = 200, seed: int = 0, **kwargs):
    """Coherence time in units of the scattering time for each red detuning.

    The depth stays fixed; each detuning gets a full delay scan followed by a
    coherence-time fit. Fit failures are recorded per point.
    """
    if any(d >= 0 for d in detunings):
        raise UsageError("detuning scans require red detunings (delta < 0)")
    species = kwargs.get("species", RB85)
    points = []
    for detuning in detunings:
        p = params.replace(detuning=float(detuning))
        tau_sc = derived_scales(p, species).scattering_time
        scan = scan_delays(delays, p, spec, scattering_scale, n_traj, seed, **kwargs)
        meas = ()
        try:
            meas = tuple(measure_scan(scan, p, species))
            fit = fit_coherence_time([(2 * d, m.amplitude, m.amplitude_stderr)
                                      for (d, _), m in zip(scan, meas)])
            tau2, sig = fit.params["tau2"], fit.sigmas["tau2"]
            points.append(DetuningPoint(float(detuning), tau_sc, tau2, sig, tau2 / tau_sc,
                                        fit, meas, tuple(scan)))
        except (AnalysisError, UsageError) as exc:
            log.warning("detuning %.3g: %s", detuning, exc)
            points.append(DetuningPoint(float(detuning), tau_sc, None, None, None,
                                        measurements=meas, runs=tuple(scan), error=str(exc)))
    return points
