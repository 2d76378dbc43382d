"""Split-operator propagation with stochastic photon-recoil jumps.

Trajectories of an ensemble are propagated together as rows of one array:
each row owns its random generator, quasi-momentum and lattice depth, so
a trajectory's result does not depend on which batch it ran in.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, RunError, UsageError
from .grid import Grid, WaveFunction
from .lattice import RB85, AtomSpecies, LatticeParams, scattering_rate
from .traces import SignalTrace

MAX_JUMP_PROBABILITY = 0.05
MAX_FAILURE_FRACTION = 0.01
_RANDOM_BLOCK = 4096
_RAMP_SETTLED = 1e-12  # wavelengths

RATE_MODES = ("weighted", "uniform")
OBSERVABLES = ("redistribution", "position")


@dataclass(frozen=True)
class ShiftProtocol:
    """Timeline of lattice translations and the recording window.

    ``events`` holds (time in s, new offset in wavelengths) pairs; the offset
    is 0 before the first event. Evolution starts at ``t_start`` (default:
    the earliest event or recording time).
    """

    events: tuple
    t_record_start: float
    t_record_end: float
    output_dt: float = 0.2e-6
    t_start: float | None = None

    def __post_init__(self):
        events = tuple((float(t), float(s)) for t, s in self.events)
        object.__setattr__(self, "events", events)
        times = [t for t, _ in events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("shift event times must be strictly increasing")
        for _, s in events:
            if not 0 <= s < 0.25:
                raise ConfigurationError(f"lattice offset {s!r} outside [0, 0.25) lambda")
        if not self.t_record_end > self.t_record_start:
            raise ConfigurationError("recording window is empty")
        if not self.output_dt > 0:
            raise ConfigurationError("output_dt must be positive")
        if self.t_start is None:
            object.__setattr__(self, "t_start", min(times + [self.t_record_start]))
        if self.t_start > min(times + [self.t_record_start]):
            raise ConfigurationError("t_start lies after the first event or recording time")

    @property
    def final_offset(self) -> float:
        return self.events[-1][1] if self.events else 0.0

    def record_times(self) -> np.ndarray:
        n = int(math.floor((self.t_record_end - self.t_record_start) / self.output_dt + 1e-9))
        return self.t_record_start + self.output_dt * np.arange(n + 1)


@dataclass(frozen=True)
class JumpRecord:
    """Jump times (s) and recoil momenta (hbar k units) of one trajectory."""

    times: np.ndarray
    recoil_momenta: np.ndarray

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class TrajectoryResult:
    trace: SignalTrace
    jumps: JumpRecord
    seed: int
    final_state: WaveFunction = field(repr=False)


@dataclass(frozen=True)
class EnsembleResult:
    """Mean trace with standard errors plus per-trajectory data."""

    trace: SignalTrace
    signals: np.ndarray = field(repr=False)
    jump_counts: np.ndarray
    seeds: np.ndarray
    failed: tuple = ()
    rate_mode: str = "weighted"

    @property
    def mean_jumps(self) -> float:
        return float(np.mean(self.jump_counts)) if len(self.jump_counts) else 0.0


def trajectory_seed(base_seed: int, index: int) -> int:
    return int(base_seed) ^ int(index)


def sample_emission_projection(rng: np.random.Generator, size=None):
    """Draw u in [-1, 1] from the density 3/8 (1 + u^2) by CDF inversion.

    F(u) = 1/2 + 3/8 (u + u^3/3), so u solves the depressed cubic
    u^3 + 3u - (8F - 4) = 0, which has a single real root (Cardano).
    """
    f = rng.random(size)
    half = 4 * f - 2
    root = np.sqrt(half * half + 1)
    return np.cbrt(half + root) + np.cbrt(half - root)


def emission_density(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1, 0.375 * (1 + u * u), 0.0)


def draw_recoil(rng: np.random.Generator) -> float:
    """Absorption along +-z plus the projected spontaneous emission, in hbar k."""
    absorbed = 1.0 if rng.random() < 0.5 else -1.0
    return absorbed + float(sample_emission_projection(rng))


def apply_shift(offset: float, event, params: LatticeParams, elapsed: float) -> float:
    """Lattice offset (wavelengths) a time ``elapsed`` after a shift event.

    ``offset`` is the offset when the event fired and ``event`` the
    (time, new_offset) pair. Sudden shifts jump straight to the new offset;
    otherwise the offset relaxes exponentially with ``params.shift_ramp_time``.
    """
    target = event[1]
    if elapsed < 0:
        return offset
    tau = params.shift_ramp_time
    if tau == 0:
        return target
    return target + (offset - target) * math.exp(-elapsed / tau)


def _offset_schedule(protocol: ShiftProtocol, params: LatticeParams, dt: float, n_steps: int):
    """Per-step lattice offsets (evaluated at step midpoints) as a dict of changes."""
    t0 = protocol.t_start
    changes = {}
    current = 0.0
    events = [(int(round((t - t0) / dt)), t, s) for t, s in protocol.events]
    for k, (i_event, t_event, _) in enumerate(events):
        if i_event > n_steps:
            break
        start_offset = current
        i_next = events[k + 1][0] if k + 1 < len(events) else n_steps + 1
        event = (t_event, events[k][2])
        if params.shift_ramp_time == 0:
            current = event[1]
            changes[i_event] = current
            continue
        for i in range(i_event, min(i_next, n_steps + 1)):
            elapsed = (i + 0.5) * dt - i_event * dt
            current = apply_shift(start_offset, event, params, elapsed)
            if abs(current - event[1]) < _RAMP_SETTLED:
                current = event[1]
                changes[i] = current
                break
            changes[i] = current
    return changes


def _step_indices(protocol: ShiftProtocol, dt: float):
    t0 = protocol.t_start
    stride = int(round(protocol.output_dt / dt))
    if stride < 1 or abs(stride * dt - protocol.output_dt) > 1e-6 * protocol.output_dt:
        raise ConfigurationError("output_dt must be an integer multiple of the time step")
    i_rec0 = int(round((protocol.t_record_start - t0) / dt))
    n_rec = len(protocol.record_times())
    return i_rec0, stride, n_rec, i_rec0 + (n_rec - 1) * stride


def observable_values(density: np.ndarray, x: np.ndarray, z_offset: float,
                      mode: str = "redistribution") -> np.ndarray:
    """Row-wise observable of probability densities on positions ``x``."""
    y = x - 2 * math.pi * z_offset
    if mode == "redistribution":
        f = np.sin(2 * y)
    elif mode == "position":
        f = ((y + math.pi / 2) % math.pi - math.pi / 2) / (2 * math.pi)
    else:
        raise UsageError(f"unknown observable {mode!r}; expected one of {OBSERVABLES}")
    return (density @ f) / density.sum(axis=-1)


def observable(psi: WaveFunction, z_offset: float = 0.0, mode: str = "redistribution") -> float:
    """Redistribution signal <sin(2k(z - z_offset))>, or <z - z_offset> in lambda.

    ``z_offset`` is the centre of the reference well in wavelengths.
    """
    return float(observable_values(psi.density()[None, :], psi.grid.x, z_offset, mode)[0])


def _is_cell_periodic(rows: np.ndarray, grid: Grid) -> bool:
    if grid.n_wells == 1:
        return True
    m = grid.cell_points
    first = rows[..., :m]
    return all(np.array_equal(first, rows[..., j * m:(j + 1) * m]) for j in range(1, grid.n_wells))


def _propagation_axes(grid: Grid, cell: bool):
    if cell:
        return grid.x_cell, grid.p_cell
    x = grid.x
    return x, 2 * math.pi * np.fft.fftfreq(grid.n_points, d=x[1] - x[0])


def _batch_evolve(amplitudes: np.ndarray, quasi_momenta: np.ndarray, depths: np.ndarray,
                  rngs: Sequence[np.random.Generator] | None, params: LatticeParams,
                  protocol: ShiftProtocol, scattering_scale: float, grid: Grid,
                  species: AtomSpecies, rate_mode: str, observable_mode: str,
                  z_offset: float | None):
    """Propagate rows of amplitudes through ``protocol``.

    Returns (signals, jump_times, jump_recoils, final_amplitudes,
    final_quasi_momenta, failed_mask).
    """
    if rate_mode not in RATE_MODES:
        raise ConfigurationError(f"rate_mode must be one of {RATE_MODES}, got {rate_mode!r}")
    if observable_mode not in OBSERVABLES:
        raise ConfigurationError(f"observable must be one of {OBSERVABLES}")
    if scattering_scale < 0:
        raise ConfigurationError("scattering_scale must be >= 0")
    dt = grid.dt
    grid.check_time_step(species.recoil_frequency)
    n_rows = amplitudes.shape[0]
    depths = np.asarray(depths, dtype=float)
    kappa = np.array(quasi_momenta, dtype=float)

    cell = _is_cell_periodic(amplitudes, grid)
    u = np.array(amplitudes[:, : grid.cell_points] if cell else amplitudes, dtype=complex)
    x, p = _propagation_axes(grid, cell)
    dtau = species.recoil_frequency * dt

    jumping = scattering_scale > 0
    if jumping:
        if rngs is None:
            raise UsageError("random generators are required when scattering is on")
        rates = scattering_scale * np.array(
            [scattering_rate(d, params.detuning, species) if d > 0 else 0.0 for d in depths])
        p_max = float(rates.max() * dt) if n_rows else 0.0
        if p_max >= MAX_JUMP_PROBABILITY:
            raise ConfigurationError(
                f"jump probability per step {p_max:.3g} >= {MAX_JUMP_PROBABILITY}; reduce dt"
            )
    else:
        rates = np.zeros(n_rows)

    i_rec0, stride, n_rec, n_steps = _step_indices(protocol, dt)
    offsets = _offset_schedule(protocol, params, dt, n_steps)
    z_obs = protocol.final_offset if z_offset is None else z_offset

    kin = np.exp(-1j * (p[None, :] + kappa[:, None]) ** 2 * dtau)
    signals = np.full((n_rows, n_rec), np.nan)
    jump_times = [[] for _ in range(n_rows)]
    jump_recoils = [[] for _ in range(n_rows)]
    failed = np.zeros(n_rows, dtype=bool)
    uniforms = None
    offset = 0.0
    half_v = c2 = None
    t0 = protocol.t_start

    def potential_factors(offset):
        c2 = np.cos(x - 2 * math.pi * offset) ** 2
        return np.exp(0.5j * dtau * depths[:, None] * c2[None, :]), c2

    with np.errstate(all="ignore"):
        for i in range(n_steps + 1):
            if i >= i_rec0 and (i - i_rec0) % stride == 0:
                rho = np.abs(u) ** 2
                sig = observable_values(rho, x, z_obs, observable_mode)
                bad = ~np.isfinite(sig)
                if bad.any():
                    failed |= bad
                    u[bad] = 0.0
                    sig[bad] = np.nan
                signals[:, (i - i_rec0) // stride] = sig
            if i == n_steps:
                break
            if i in offsets or half_v is None:
                offset = offsets.get(i, offset)
                half_v, c2 = potential_factors(offset)
            if jumping:
                k = i % _RANDOM_BLOCK
                if k == 0:
                    uniforms = np.stack([g.random(_RANDOM_BLOCK) for g in rngs])
                rho = np.abs(u) ** 2
                if rate_mode == "weighted":
                    weight = (rho @ c2) / rho.sum(axis=1)
                else:
                    weight = 1.0
                prob = rates * dt * weight
                hits = np.nonzero((uniforms[:, k] < prob) & ~failed)[0]
                for r in hits:
                    q = draw_recoil(rngs[r])
                    kappa[r] += q
                    kin[r] = np.exp(-1j * (p + kappa[r]) ** 2 * dtau)
                    jump_times[r].append(t0 + i * dt)
                    jump_recoils[r].append(q)
            u = half_v * np.fft.ifft(kin * np.fft.fft(half_v * u, axis=1), axis=1)

    if cell:
        u = grid.tile(u)
    failed |= ~np.all(np.isfinite(u), axis=1)
    return (signals, [np.array(t) for t in jump_times], [np.array(q) for q in jump_recoils],
            u, kappa, failed)


def step_coherent(psi: WaveFunction, params: LatticeParams, shift: float,
                  dt: float | None = None, species: AtomSpecies = RB85) -> WaveFunction:
    """One Strang split step exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2).

    ``shift`` is the lattice offset in wavelengths; ``dt`` defaults to the
    grid step.
    """
    grid = psi.grid
    dt = grid.dt if dt is None else dt
    grid.check_time_step(species.recoil_frequency, dt)
    cell = _is_cell_periodic(psi.amplitudes, grid)
    u = grid.cell(psi.amplitudes) if cell else psi.amplitudes
    x, p = _propagation_axes(grid, cell)
    dtau = species.recoil_frequency * dt
    half_v = np.exp(0.5j * dtau * params.depth * np.cos(x - 2 * math.pi * shift) ** 2)
    kin = np.exp(-1j * (p + psi.quasi_momentum) ** 2 * dtau)
    u = half_v * np.fft.ifft(kin * np.fft.fft(half_v * u))
    if not np.all(np.isfinite(u)):
        raise NumericError(f"non-finite amplitudes after step at t={psi.time:.6g} s")
    if cell:
        u = grid.tile(u)
    return WaveFunction(u, grid, psi.time + dt, psi.quasi_momentum)


def evolve_with_jumps(psi: WaveFunction, params: LatticeParams, schedule: ShiftProtocol,
                      seed: int, scattering_scale: float = 1.0, *,
                      species: AtomSpecies = RB85, rate_mode: str = "weighted",
                      observable_mode: str = "redistribution",
                      z_offset: float | None = None) -> TrajectoryResult:
    """Single quantum-jump trajectory through ``schedule``.

    Per step a recoil jump happens with probability
    scattering_scale * Gamma'_eff * dt, where Gamma'_eff is Gamma' weighted by
    the local intensity <cos^2> of the state (``rate_mode="weighted"``) or
    the peak rate (``"uniform"``). The observable is recorded on the
    schedule's output clock relative to ``z_offset`` (default: final well).
    """
    return _single(psi, params.depth, params, schedule, seed, scattering_scale, species,
                   rate_mode, observable_mode, z_offset)


def _single(psi, depth, params, schedule, seed, scattering_scale, species, rate_mode,
            observable_mode, z_offset):
    rng = np.random.default_rng(seed)
    out = _batch_evolve(psi.amplitudes[None, :], np.array([psi.quasi_momentum]),
                        np.array([depth]), [rng], params, schedule, scattering_scale,
                        psi.grid, species, rate_mode, observable_mode, z_offset)
    signals, jt, jq, final, kappa, failed = out
    if failed[0]:
        raise NumericError(f"trajectory with seed {seed} produced non-finite amplitudes")
    trace = SignalTrace(schedule.record_times(), signals[0])
    end = schedule.t_start + _step_indices(schedule, psi.grid.dt)[3] * psi.grid.dt
    state = WaveFunction(final[0], psi.grid, end, float(kappa[0]))
    return TrajectoryResult(trace, JumpRecord(jt[0], jq[0]), seed, state)


def truncated_normal_depth(depth: float, spread: float) -> Callable[[np.random.Generator], float]:
    """Depth sampler drawing U0 from N(depth, spread*depth) truncated to positive values."""
    def sample(rng: np.random.Generator) -> float:
        if spread == 0:
            return depth
        while True:
            value = rng.normal(depth, spread * depth)
            if value > 0:
                return float(value)
    return sample


class _DepthSampler:
    # picklable equivalent of truncated_normal_depth for process pools
    def __init__(self, depth, spread):
        self.depth, self.spread = depth, spread

    def __call__(self, rng):
        return truncated_normal_depth(self.depth, self.spread)(rng)


def _run_chunk(indices, base_seed, params, schedule, scattering_scale, preparer,
               depth_sampler, grid, species, rate_mode, observable_mode, z_offset):
    rows, kappas, depths, rngs = [], [], [], []
    for i in indices:
        seed = trajectory_seed(base_seed, i)
        prep_rng = np.random.default_rng([seed, 1])
        depth = depth_sampler(prep_rng)
        psi = preparer(depth, prep_rng)
        rows.append(psi.amplitudes)
        kappas.append(psi.quasi_momentum)
        depths.append(depth)
        rngs.append(np.random.default_rng(seed))
    return _batch_evolve(np.array(rows), np.array(kappas), np.array(depths), rngs, params,
                         schedule, scattering_scale, grid, species, rate_mode,
                         observable_mode, z_offset)


def default_workers() -> int:
    env = os.environ.get("WPECHO_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(n_traj: int, base_seed: int, params: LatticeParams, schedule: ShiftProtocol,
                 scattering_scale: float, preparer: Callable, depth_sampler=None, *,
                 grid: Grid | None = None, species: AtomSpecies = RB85,
                 rate_mode: str = "weighted", observable_mode: str = "redistribution",
                 z_offset: float | None = None, workers: int | None = 1,
                 chunk_size: int = 64) -> EnsembleResult:
    """Run ``n_traj`` independent trajectories and average their traces.

    Trajectory ``i`` uses seed ``base_seed ^ i``: its depth and initial state
    come from ``depth_sampler(rng)`` and ``preparer(depth, rng)`` with a
    preparation generator derived from that seed, its jumps from a generator
    seeded with it directly. Results are reduced in trajectory order, so the
    output does not depend on ``workers`` or ``chunk_size`` beyond the last
    bit of the batched FFTs.
    """
    if n_traj < 1:
        raise UsageError("n_traj must be >= 1")
    if depth_sampler is None:
        depth_sampler = _DepthSampler(params.depth, params.depth_spread)
    if grid is None:
        grid = preparer.grid
    workers = default_workers() if workers is None else max(1, workers)
    chunks = [list(range(a, min(a + chunk_size, n_traj))) for a in range(0, n_traj, chunk_size)]
    args = (base_seed, params, schedule, scattering_scale, preparer, depth_sampler, grid,
            species, rate_mode, observable_mode, z_offset)
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, chunks, *[[a] * len(chunks) for a in args]))
    else:
        results = [_run_chunk(c, *args) for c in chunks]

    signals = np.concatenate([r[0] for r in results])
    counts = np.array([len(t) for r in results for t in r[1]])
    failed_mask = np.concatenate([r[5] for r in results])
    failed = tuple(int(i) for i in np.nonzero(failed_mask)[0])
    if failed:
        warnings.warn(f"{len(failed)} of {n_traj} trajectories failed and were excluded",
                      RuntimeWarning, stacklevel=2)
        if len(failed) > MAX_FAILURE_FRACTION * n_traj:
            raise RunError(f"{len(failed)} of {n_traj} trajectories failed")
    good = signals[~failed_mask]
    mean = good.mean(axis=0)
    if len(good) > 1:
        stderr = good.std(axis=0, ddof=1) / math.sqrt(len(good))
    else:
        stderr = np.zeros_like(mean)
    seeds = np.array([trajectory_seed(base_seed, i) for i in range(n_traj)])
    return EnsembleResult(SignalTrace(schedule.record_times(), mean, stderr), signals,
                          counts, seeds, failed, rate_mode)


def evolve_mixture(states: np.ndarray, weights: np.ndarray, params: LatticeParams,
                   schedule: ShiftProtocol, grid: Grid, *, species: AtomSpecies = RB85,
                   observable_mode: str = "redistribution",
                   z_offset: float | None = None) -> SignalTrace:
    """Coherent evolution of a weighted mixture of pure states.

    Each row of ``states`` is propagated once and the traces are averaged
    with ``weights``. No jumps, so the result is deterministic.
    """
    weights = np.asarray(weights, dtype=float)
    out = _batch_evolve(np.asarray(states), np.zeros(len(weights)),
                        np.full(len(weights), params.depth), None, params, schedule, 0.0,
                        grid, species, "uniform", observable_mode, z_offset)
    signals, failed = out[0], out[5]
    if failed.any():
        raise NumericError("mixture propagation produced non-finite amplitudes")
    return SignalTrace(schedule.record_times(), weights @ signals / weights.sum())
