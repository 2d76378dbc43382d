"""Spatial grid and wave-function containers.

Positions are handled internally in the dimensionless coordinate
x = k z, in which one lattice period (lambda/2) has length pi and the well
centres of the unshifted lattice sit at x = 0 mod pi. Momenta are in units
of hbar k, energies in E_R and times in 1/w_R.

A wave function is stored in Bloch form psi(x) = exp(i kappa x) u(x): the
grid holds the periodic part ``u`` and ``quasi_momentum`` holds kappa. A
photon recoil exp(i q x) only changes kappa, so recoils of any size are
represented exactly on a periodic grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError


@dataclass(frozen=True)
class Grid:
    """Periodic grid covering ``n_wells`` lattice periods with ``n_points`` samples.

    ``dt`` is the integrator time step in seconds; it is only validated
    against the anti-aliasing bound when the grid is used for propagation.
    """

    n_points: int = 256
    n_wells: int = 4
    dt: float = 5e-9

    def __post_init__(self):
        n = self.n_points
        if n < 256 or n & (n - 1):
            raise ConfigurationError(f"n_points must be a power of two >= 256, got {n!r}")
        if self.n_wells < 1 or n % self.n_wells:
            raise ConfigurationError(
                f"n_wells must be a positive divisor of n_points, got {self.n_wells!r}"
            )
        if self.spacing > 1 / 64:
            raise ConfigurationError(
                f"grid step {self.spacing:.4g} lambda does not resolve the lattice (max lambda/64)"
            )
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")

    @property
    def domain_length(self) -> float:
        """Domain length in wavelengths."""
        return self.n_wells / 2

    @property
    def spacing(self) -> float:
        """Grid step in wavelengths."""
        return self.domain_length / self.n_points

    @property
    def cell_points(self) -> int:
        return self.n_points // self.n_wells

    @property
    def x(self) -> np.ndarray:
        """Dimensionless positions k z, starting half a period before a well centre."""
        step = self.n_wells * math.pi / self.n_points
        return np.arange(self.n_points) * step - math.pi / 2

    @property
    def x_cell(self) -> np.ndarray:
        """Positions of the first lattice period, [-pi/2, pi/2)."""
        return self.x[: self.cell_points]

    @property
    def p_cell(self) -> np.ndarray:
        """Momenta (hbar k units) resolvable on one lattice period: even integers."""
        m = self.cell_points
        return 2.0 * np.fft.fftfreq(m, d=1.0 / m)

    @property
    def max_kinetic_energy(self) -> float:
        """Largest kinetic energy on the grid, in E_R."""
        return (math.pi / (self.x[1] - self.x[0])) ** 2

    def kinetic_phase(self, recoil_frequency: float, dt: float | None = None) -> float:
        return self.max_kinetic_energy * recoil_frequency * (self.dt if dt is None else dt)

    def check_time_step(self, recoil_frequency: float, dt: float | None = None) -> None:
        """Raise if the largest kinetic phase per step reaches pi/4."""
        phase = self.kinetic_phase(recoil_frequency, dt)
        if not phase < math.pi / 4:
            raise ConfigurationError(
                f"time step too large: max kinetic phase {phase:.3f} rad >= pi/4"
            )

    def tile(self, cell_values: np.ndarray) -> np.ndarray:
        """Extend one-period samples (last axis) periodically over the full grid."""
        cell_values = np.asarray(cell_values)
        if cell_values.shape[-1] != self.cell_points:
            raise UsageError("cell array does not match the grid's points per well")
        reps = (1,) * (cell_values.ndim - 1) + (self.n_wells,)
        return np.tile(cell_values, reps)

    def cell(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[..., : self.cell_points]


@dataclass
class WaveFunction:
    """Cell-periodic amplitudes on a :class:`Grid` plus Bloch quasi-momentum.

    Normalisation: sum |u|^2 * dz = 1 with dz in wavelengths, over the whole
    domain.
    """

    amplitudes: np.ndarray
    grid: Grid
    time: float = 0.0
    quasi_momentum: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.grid.n_points,):
            raise UsageError(
                f"amplitudes shape {self.amplitudes.shape} does not match grid ({self.grid.n_points},)"
            )

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.spacing)

    def normalized(self) -> "WaveFunction":
        return WaveFunction(
            self.amplitudes / math.sqrt(self.norm), self.grid, self.time, self.quasi_momentum
        )

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def values(self) -> np.ndarray:
        """Full wave function exp(i kappa x) u(x) on the grid."""
        return np.exp(1j * self.quasi_momentum * self.grid.x) * self.amplitudes

    @classmethod
    def from_cell(cls, cell_amplitudes, grid: Grid, time=0.0, quasi_momentum=0.0):
        amps = grid.tile(cell_amplitudes)
        wf = cls(amps, grid, time, quasi_momentum)
        return wf.normalized()

    def position_spread(self, center: float = 0.0) -> float:
        """RMS distance (wavelengths) from the nearest well centre at ``center`` (lambda)."""
        x = self.grid.x - 2 * math.pi * center
        folded = (x + math.pi / 2) % math.pi - math.pi / 2
        rho = self.density()
        var = np.sum(rho * folded**2) / np.sum(rho)
        return math.sqrt(var) / (2 * math.pi)
