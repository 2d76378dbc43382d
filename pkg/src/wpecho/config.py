"""Run configuration: INI file round trip, validation and domain objects.

Times in the configuration are in microseconds, the grid step in
nanoseconds; everything else uses the natural units of :mod:`wpecho.lattice`.
"""

from __future__ import annotations

import configparser
import io
import math
import typing
from dataclasses import dataclass, field, fields, replace

from scipy import constants

from .errors import ConfigurationError
from .experiment import InitialStateSpec
from .grid import Grid
from .lattice import AtomSpecies, LatticeParams


@dataclass(frozen=True)
class SpeciesSection:
    mass_u: float = 85.0
    wavelength_nm: float = 780.0
    linewidth_mhz: float = 5.89  # Gamma / 2 pi
    label: str = "85Rb 5S1/2(F=3) -> 5P3/2(F'=4)"


@dataclass(frozen=True)
class LatticeSection:
    depth: float = 831.0
    detuning: float = -7.8
    shift: float = 0.10
    depth_spread: float = 0.0
    shift_ramp_time_us: float = 0.0


@dataclass(frozen=True)
class GridSection:
    n_points: int = 256
    n_wells: int = 4
    dt_ns: float = 5.0


@dataclass(frozen=True)
class InitialStateSection:
    kind: str = "thermal"
    temperature: typing.Optional[float] = None
    rms_width: float = 1 / 18
    mixture: str = "sampled"


@dataclass(frozen=True)
class ProtocolSection:
    delta_t_us: float = 32.0
    delta_t_list_us: tuple = (12.0, 20.0, 28.0, 36.0, 44.0)
    detuning_list: tuple = ()
    reference_delay_us: float = 108.0
    scattering_scale: float = 1.0
    n_traj: int = 200
    base_seed: int = 0
    t_end_us: typing.Optional[float] = None
    output_dt_us: float = 0.2
    rate_mode: str = "weighted"
    observable: str = "redistribution"
    observable_offset: float = 0.0


@dataclass(frozen=True)
class OutputSection:
    directory: str = "wpecho-out"
    workers: typing.Optional[int] = None


_SECTIONS = {
    "species": SpeciesSection,
    "lattice": LatticeSection,
    "grid": GridSection,
    "initial_state": InitialStateSection,
    "protocol": ProtocolSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    """Complete, serialisable description of a run.

    Defaults reproduce the reference scenario: 831 E_R, -7.8 Gamma,
    0.10 lambda shift, 32 us echo delay and a 108 us reference delay.
    """

    species: SpeciesSection = field(default_factory=SpeciesSection)
    lattice: LatticeSection = field(default_factory=LatticeSection)
    grid: GridSection = field(default_factory=GridSection)
    initial_state: InitialStateSection = field(default_factory=InitialStateSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    output: OutputSection = field(default_factory=OutputSection)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply {(section, key): value} overrides, skipping ``None`` values."""
        sections = {name: getattr(self, name) for name in _SECTIONS}
        for (section, key), value in overrides.items():
            if value is None:
                continue
            sections[section] = replace(sections[section], **{key: value})
        return RunConfig(**sections)

    def to_dict(self) -> dict:
        return {name: {f.name: getattr(getattr(self, name), f.name)
                       for f in fields(getattr(self, name))} for name in _SECTIONS}

    # domain objects -------------------------------------------------------

    def species_obj(self) -> AtomSpecies:
        s = self.species
        with _field_errors("species"):
            return AtomSpecies(s.mass_u * constants.atomic_mass, s.wavelength_nm * 1e-9,
                               2 * math.pi * s.linewidth_mhz * 1e6, s.label)

    def lattice_params(self) -> LatticeParams:
        s = self.lattice
        with _field_errors("lattice"):
            return LatticeParams(s.depth, s.detuning, s.shift, s.depth_spread,
                                 s.shift_ramp_time_us * 1e-6)

    def grid_obj(self) -> Grid:
        s = self.grid
        with _field_errors("grid"):
            grid = Grid(s.n_points, s.n_wells, s.dt_ns * 1e-9)
            grid.check_time_step(self.species_obj().recoil_frequency)
            return grid

    def initial_state_spec(self) -> InitialStateSpec:
        s = self.initial_state
        with _field_errors("initial_state"):
            return InitialStateSpec(s.kind, s.temperature, s.rms_width, s.mixture)

    def validate(self) -> "RunConfig":
        self.species_obj()
        self.lattice_params()
        self.grid_obj()
        self.initial_state_spec()
        p = self.protocol
        checks = [
            (p.delta_t_us > 0, "delta_t_us must be positive"),
            (p.reference_delay_us > 0, "reference_delay_us must be positive"),
            (p.scattering_scale >= 0, "scattering_scale must be >= 0"),
            (p.n_traj >= 1, "n_traj must be >= 1"),
            (p.output_dt_us > 0, "output_dt_us must be positive"),
            (p.t_end_us is None or p.t_end_us > 0, "t_end_us must be positive"),
            (all(d > 0 for d in p.delta_t_list_us), "delta_t_list_us entries must be positive"),
            (list(p.delta_t_list_us) == sorted(set(p.delta_t_list_us)),
             "delta_t_list_us must be strictly ascending"),
            (all(d < 0 for d in p.detuning_list), "detuning_list entries must be red (< 0)"),
            (p.rate_mode in ("weighted", "uniform"), "rate_mode must be 'weighted' or 'uniform'"),
            (p.observable in ("redistribution", "position"),
             "observable must be 'redistribution' or 'position'"),
            (0 <= p.observable_offset < 0.25, "observable_offset must lie in [0, 0.25)"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(f"[protocol] {message}")
        if self.output.workers is not None and self.output.workers < 1:
            raise ConfigurationError("[output] workers must be >= 1")
        return self


class _field_errors:
    """Prefix configuration errors raised inside the block with the section name."""

    def __init__(self, section):
        self.section = section

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, ConfigurationError):
            raise ConfigurationError(f"[{self.section}] {exc}") from exc
        return False


def _field_type(cls, name):
    hints = typing.get_type_hints(cls)
    hint = hints[name]
    optional = typing.get_origin(hint) is typing.Union
    base = next(a for a in typing.get_args(hint) if a is not type(None)) if optional else hint
    return base, optional


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(section, cls, name, text: str):
    base, optional = _field_type(cls, name)
    text = text.strip()
    if text == "" and (optional or base is tuple):
        return None if optional else ()
    try:
        if base is tuple:
            return tuple(float(v) for v in text.split(",") if v.strip())
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"[{section}] {name}: cannot parse {text!r} as {base.__name__}") from None


def serialize(config: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for name in _SECTIONS:
        section = getattr(config, name)
        parser[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse(text: str) -> RunConfig:
    """Parse INI text; unspecified keys keep their defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration file: {exc}") from None
    sections = {}
    for name, cls in _SECTIONS.items():
        values = {}
        if parser.has_section(name):
            known = {f.name for f in fields(cls)}
            for key, raw in parser[name].items():
                if key not in known:
                    raise ConfigurationError(f"[{name}] unknown key {key!r}")
                values[key] = _parse(name, cls, key, raw)
        sections[name] = cls(**values)
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown configuration sections: {sorted(unknown)}")
    return RunConfig(**sections)


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration file {path}: {exc}") from None
