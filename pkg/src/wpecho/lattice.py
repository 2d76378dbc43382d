"""Physical constants, lattice parameters and closed-form scaling relations.

All user-facing quantities are dimensionless: depths in recoil energies
E_R, detunings in natural linewidths Gamma, lengths in wavelengths lambda.
Conversion to SI happens only through :class:`AtomSpecies`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from .errors import DomainError, ConfigurationError

HBAR = constants.hbar

# Empirical anharmonicity constants: the measured oscillation frequency is
# 0.86 of the harmonic one, and the mean frequency spread is 0.14 w_osc - w_R.
ANHARMONIC_FREQUENCY_FACTOR = 0.86
ANHARMONIC_SPREAD_FACTOR = 0.14

# Single (I, delta, U0) anchor used by calibrate_depth.
_CALIBRATION_INTENSITY = 56.5  # mW/cm^2
_CALIBRATION_DETUNING = 7.8  # |delta| / Gamma
_CALIBRATION_DEPTH = 823.0  # E_R


@dataclass(frozen=True)
class AtomSpecies:
    """Atomic species driving a 1D lattice.

    Parameters
    ----------
    mass : float
        Atomic mass in kg.
    wavelength : float
        Lattice wavelength in m.
    linewidth : float
        Natural linewidth Gamma in rad/s.
    label : str
        Transition label, informational only.
    """

    mass: float = 85 * constants.atomic_mass
    wavelength: float = 780e-9
    linewidth: float = 2 * math.pi * 5.89e6
    label: str = "85Rb 5S1/2(F=3) -> 5P3/2(F'=4)"
    k: float = field(init=False, repr=False)
    recoil_energy: float = field(init=False, repr=False)
    recoil_frequency: float = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.mass > 0 and self.wavelength > 0 and self.linewidth > 0):
            raise ConfigurationError(
                "mass, wavelength and linewidth must all be positive, got "
                f"{self.mass!r}, {self.wavelength!r}, {self.linewidth!r}"
            )
        k = 2 * math.pi / self.wavelength
        e_r = (HBAR * k) ** 2 / (2 * self.mass)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "recoil_energy", e_r)
        object.__setattr__(self, "recoil_frequency", e_r / HBAR)


RB85 = AtomSpecies()


@dataclass(frozen=True)
class LatticeParams:
    """Lattice configuration in natural units.

    depth is U0 in E_R, detuning is delta in Gamma (negative = red),
    shift is the translation dz in lambda, depth_spread is the relative
    standard deviation of U0 across the atom cloud and shift_ramp_time the
    1/e switching time of a translation in seconds (0 = sudden).
    """

    depth: float = 831.0
    detuning: float = -7.8
    shift: float = 0.10
    depth_spread: float = 0.0
    shift_ramp_time: float = 0.0

    def __post_init__(self):
        # depth 0 is admitted only so the free spectrum can be inspected
        if not self.depth >= 0:
            raise ConfigurationError(f"depth must be >= 0 E_R, got {self.depth!r}")
        if not 0 <= self.shift < 0.25:
            raise ConfigurationError(f"shift must satisfy 0 <= dz < 0.25 lambda, got {self.shift!r}")
        if not 0 <= self.depth_spread < 1:
            raise ConfigurationError(
                f"depth_spread must lie in [0, 1), got {self.depth_spread!r}"
            )
        if not self.shift_ramp_time >= 0:
            raise ConfigurationError(
                f"shift_ramp_time must be >= 0, got {self.shift_ramp_time!r}"
            )
        if not math.isfinite(self.detuning):
            raise ConfigurationError(f"detuning must be finite, got {self.detuning!r}")

    def replace(self, **changes) -> "LatticeParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DerivedScales:
    """Frequencies and times derived from a lattice configuration (SI)."""

    osc_frequency: float
    dephasing_spread: float
    scattering_rate: float
    scattering_time: float

    @property
    def dephasing_time(self) -> float:
        return 1.0 / self.dephasing_spread


def potential(z, shift, params: LatticeParams, species: AtomSpecies = RB85):
    """Lattice potential -U0 cos^2(k (z - shift)) in joules.

    ``z`` and ``shift`` are in metres; ``z`` may be an array.
    """
    u0 = params.depth * species.recoil_energy
    return -u0 * np.cos(species.k * (np.asarray(z) - shift)) ** 2


def scattering_rate(depth: float, detuning: float, species: AtomSpecies = RB85) -> float:
    """Photon scattering rate Gamma' = U0 Gamma / (hbar |delta|) in 1/s.

    With U0 in E_R and delta in Gamma this reduces to U0 w_R / |delta|.
    """
    if detuning == 0:
        raise DomainError("scattering rate is undefined at zero detuning")
    return depth * species.recoil_frequency / abs(detuning)


def osc_frequency(depth: float, species: AtomSpecies = RB85) -> float:
    """Anharmonicity-corrected oscillation frequency w_osc in rad/s."""
    if not depth > 0:
        raise DomainError(f"depth must be positive, got {depth!r}")
    return 2 * species.recoil_frequency * ANHARMONIC_FREQUENCY_FACTOR * math.sqrt(depth)


def depth_from_frequency(omega: float, species: AtomSpecies = RB85) -> float:
    """Forward relation U0/E_R = (1/0.86^2) (w_osc / 2 w_R)^2."""
    return (omega / (2 * species.recoil_frequency)) ** 2 / ANHARMONIC_FREQUENCY_FACTOR**2


def dephasing_spread(omega_osc: float, species: AtomSpecies = RB85) -> float:
    """Mean spread of oscillation frequencies, 0.14 w_osc - w_R, in rad/s.

    Raises
    ------
    DomainError
        If the spread is not positive, i.e. the well is too shallow for the
        anharmonic model to predict any dephasing.
    """
    spread = ANHARMONIC_SPREAD_FACTOR * omega_osc - species.recoil_frequency
    if not spread > 0:
        raise DomainError(
            "anharmonic spread 0.14*w_osc - w_R is not positive "
            f"({spread:.6g} rad/s); the lattice is too shallow for this model"
        )
    return spread


def calibrate_depth(intensity: float, detuning: float) -> float:
    """Lattice depth in E_R from beam intensity (mW/cm^2) and detuning (Gamma).

    Linear single-point calibration U0 = C I / |delta| anchored at
    56.5 mW/cm^2, 7.8 Gamma -> 823 E_R.
    """
    if detuning == 0:
        raise DomainError("depth calibration is undefined at zero detuning")
    if not intensity > 0:
        raise DomainError(f"intensity must be positive, got {intensity!r}")
    c = _CALIBRATION_DEPTH * _CALIBRATION_DETUNING / _CALIBRATION_INTENSITY
    return c * intensity / abs(detuning)


def derived_scales(params: LatticeParams, species: AtomSpecies = RB85) -> DerivedScales:
    omega = osc_frequency(params.depth, species)
    rate = scattering_rate(params.depth, params.detuning, species)
    return DerivedScales(
        osc_frequency=omega,
        dephasing_spread=dephasing_spread(omega, species),
        scattering_rate=rate,
        scattering_time=1.0 / rate,
    )
