"""Eigenstates of the (shifted) lattice Hamiltonian.

The lattice potential is periodic with one lattice period, so the grid
Hamiltonian is block diagonal in Bloch sectors. The solver works in the
cell-periodic sector: states are expanded in the plane waves exp(i q x),
q an even integer (hbar k units) resolvable on the grid. The matrix is
built from the FFT of the sampled potential, so it is exactly the operator
the split-step propagator applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError
from .grid import Grid, WaveFunction
from .lattice import HBAR, RB85, AtomSpecies, LatticeParams

RESIDUAL_TOLERANCE = 1e-8
DEGENERACY_TOLERANCE = 1e-9  # E_R
EXTRA_CONTINUUM_STATES = 10


@dataclass(frozen=True)
class EigenSystem:
    """Lowest eigenpairs of H = p^2/2m + U(z - shift) on a grid.

    ``energies`` are in joules; ``states`` has shape (n_states, n_points) and
    holds normalised cell-periodic amplitudes. ``shift`` is in wavelengths.
    """

    energies: np.ndarray
    states: np.ndarray
    grid: Grid
    shift: float
    recoil_energy: float
    residuals: np.ndarray = field(repr=False)
    parities: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.energies)

    @property
    def energies_recoil(self) -> np.ndarray:
        return self.energies / self.recoil_energy

    @property
    def n_bound(self) -> int:
        return int(np.count_nonzero(self.energies < 0))

    def state(self, n: int) -> WaveFunction:
        return WaveFunction(self.states[n].copy(), self.grid)


@dataclass(frozen=True)
class ModeDecomposition:
    """Overlaps c_n = <phi_n|psi> and the probability they retain."""

    coefficients: np.ndarray
    kept_fraction: float

    def __len__(self):
        return len(self.coefficients)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2


def sector_hamiltonian(depth: float, shift: float, grid: Grid) -> np.ndarray:
    """Hamiltonian matrix (E_R units) on the DFT coefficients of one lattice period.

    The basis vector ``a`` is the DFT mode exp(2 pi i a j / M) of the cell
    samples, i.e. the plane wave with momentum ``grid.p_cell[a]`` up to a
    constant phase, which leaves the matrix unchanged.
    """
    m = grid.cell_points
    v = -depth * np.cos(grid.x_cell - 2 * math.pi * shift) ** 2
    vhat = np.fft.fft(v) / m
    idx = (np.arange(m)[:, None] - np.arange(m)[None, :]) % m
    return vhat[idx] + np.diag(grid.p_cell**2)


def apply_hamiltonian(amplitudes: np.ndarray, depth: float, shift: float, grid: Grid,
                      quasi_momentum: float = 0.0) -> np.ndarray:
    """Grid Hamiltonian (E_R units) applied to full-grid amplitudes via FFT."""
    x = grid.x
    step = x[1] - x[0]
    p = 2 * math.pi * np.fft.fftfreq(grid.n_points, d=step)
    kinetic = np.fft.ifft((p + quasi_momentum) ** 2 * np.fft.fft(amplitudes))
    return kinetic - depth * np.cos(x - 2 * math.pi * shift) ** 2 * amplitudes


def _reflect(vectors, grid: Grid, shift: float):
    """Plane-wave coefficients of the vectors and of their mirror images about the well centre.

    Reflection u(x) -> u(2s - x) maps the coefficient c_q to c_{-q} exp(2iqs).
    """
    q = grid.p_cell
    c = vectors * np.exp(-1j * q * grid.x_cell[0])[:, None]
    neg = (-np.arange(len(q))) % len(q)
    reflected = np.empty_like(c)
    reflected[neg] = c * np.exp(2j * q * 2 * math.pi * shift)[:, None]
    return c, reflected


def _parities(vectors, grid: Grid, shift: float):
    c, reflected = _reflect(vectors, grid, shift)
    return np.real(np.sum(np.conj(c) * reflected, axis=0))


def _order_degenerate(energies, vectors, grid, shift):
    """Rotate near-degenerate clusters into parity eigenstates, even first."""
    vectors = vectors.copy()
    n = len(energies)
    i = 0
    while i < n:
        j = i + 1
        while j < n and energies[j] - energies[i] < DEGENERACY_TOLERANCE * max(1.0, abs(energies[i])):
            j += 1
        if j - i > 1:
            block = vectors[:, i:j]
            c, reflected = _reflect(block, grid, shift)
            pmat = np.conj(c).T @ reflected
            pvals, pvecs = np.linalg.eigh(0.5 * (pmat + np.conj(pmat).T))
            vectors[:, i:j] = block @ pvecs[:, np.argsort(-pvals, kind="stable")]
        i = j
    return energies, vectors


def _fix_phase(vectors):
    """Make the largest component of each column real and positive."""
    k = np.argmax(np.abs(vectors), axis=0)
    ph = vectors[k, np.arange(vectors.shape[1])]
    return vectors * (np.abs(ph) / ph)[None, :]


def solve_eigensystem(params: LatticeParams, shift: float, grid: Grid,
                      n_states: int | None = None,
                      species: AtomSpecies = RB85) -> EigenSystem:
    """Lowest eigenpairs of the lattice shifted by ``shift`` wavelengths.

    ``n_states`` defaults to every bound state (E < 0) plus ten continuum
    states. Raises :class:`NumericError` if any eigenpair misses the relative
    residual tolerance.
    """
    m = grid.cell_points
    if n_states is not None and not 1 <= n_states <= grid.n_points // 4:
        raise UsageError(f"n_states must lie in [1, {grid.n_points // 4}], got {n_states}")
    if n_states is not None and n_states > m:
        raise UsageError(f"only {m} cell-periodic states exist on this grid")
    h = sector_hamiltonian(params.depth, shift, grid)
    energies, vectors = np.linalg.eigh(h)
    if n_states is None:
        n_states = min(int(np.count_nonzero(energies < 0)) + EXTRA_CONTINUUM_STATES, m,
                       grid.n_points // 4)
    # include the whole degenerate cluster straddling the cut before reordering
    stop = n_states
    while stop < m and energies[stop] - energies[stop - 1] < DEGENERACY_TOLERANCE * max(
            1.0, abs(energies[stop - 1])):
        stop += 1
    energies, vectors = _order_degenerate(energies[:stop], vectors[:, :stop], grid, shift)
    energies, vectors = energies[:n_states], _fix_phase(vectors[:, :n_states])

    cell = m * np.fft.ifft(vectors, axis=0).T  # (n_states, m)
    states = grid.tile(cell)
    states /= np.sqrt(np.sum(np.abs(states) ** 2, axis=1) * grid.spacing)[:, None]

    residuals = np.empty(n_states)
    for n in range(n_states):
        r = apply_hamiltonian(states[n], params.depth, shift, grid) - energies[n] * states[n]
        scale = max(abs(energies[n]), 1.0) * np.linalg.norm(states[n])
        residuals[n] = np.linalg.norm(r) / scale
    if np.any(residuals > RESIDUAL_TOLERANCE):
        worst = int(np.argmax(residuals))
        raise NumericError(
            f"diagonalisation residual {residuals[worst]:.3e} for state {worst} exceeds "
            f"{RESIDUAL_TOLERANCE:g}"
        )
    return EigenSystem(
        energies=energies * species.recoil_energy,
        states=states,
        grid=grid,
        shift=shift,
        recoil_energy=species.recoil_energy,
        residuals=residuals,
        parities=_parities(vectors, grid, shift),
    )


def project(psi: WaveFunction, eigensystem: EigenSystem) -> ModeDecomposition:
    """Overlaps of ``psi`` with every retained eigenstate."""
    if psi.grid != eigensystem.grid:
        raise UsageError("wave function and eigensystem live on different grids")
    if psi.quasi_momentum != 0:
        raise UsageError("eigensystem describes the zero quasi-momentum sector only")
    c = (np.conj(eigensystem.states) @ psi.amplitudes) * psi.grid.spacing
    return ModeDecomposition(c, float(np.sum(np.abs(c) ** 2) / psi.norm))


def reconstruct(decomposition: ModeDecomposition, eigensystem: EigenSystem) -> WaveFunction:
    """Inverse of :func:`project` on the span of the retained states."""
    return WaveFunction(decomposition.coefficients @ eigensystem.states, eigensystem.grid)


def phase_alignment(decomposition: ModeDecomposition, energies, t: float) -> float:
    """|sum_n |c_n|^2 exp(-i E_n t / hbar)| / sum_n |c_n|^2, in [0, 1].

    ``energies`` in joules, ``t`` in seconds. Equal to one whenever all
    retained eigenphases coincide modulo 2 pi.
    """
    weights = decomposition.populations
    energies = np.asarray(energies, dtype=float)
    if len(weights) == 0:
        raise UsageError("empty decomposition")
    if len(weights) != len(energies):
        raise UsageError("decomposition and energies differ in length")
    total = weights.sum()
    if total == 0:
        raise UsageError("decomposition carries no weight")
    # subtract the mean energy first: only relative phases matter and this keeps
    # the argument small
    e = energies - np.average(energies, weights=weights)
    phases = e * t / HBAR
    return float(abs(np.sum(weights * np.exp(-1j * phases))) / total)



def mean_transition_frequency(decomposition: ModeDecomposition, energies) -> float:
    """Oscillation frequency (rad/s) of a decomposed wave packet.

    Adjacent-level spacings (E_{n+1} - E_n)/hbar averaged with the weights
    |c_n c_{n+1}|, which set how strongly each pair drives the dipole-like
    motion. ``energies`` in joules, in the decomposition's order.
    """
    c = np.abs(decomposition.coefficients)
    energies = np.asarray(energies, dtype=float)
    if len(c) < 2 or len(c) != len(energies):
        raise UsageError("need at least two modes with matching energies")
    weights = c[:-1] * c[1:]
    if weights.sum() == 0:
        raise UsageError("no adjacent-level coherence in the decomposition")
    return float(weights @ np.diff(energies) / weights.sum() / HBAR)
