"""Wave-packet echoes of atoms in a one-dimensional optical lattice.

Coherent split-operator dynamics with stochastic photon-recoil jumps,
the two-translation echo protocol, and the reductions that turn simulated
signals into dephasing and coherence times.
"""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    EchoMeasurement,
    FitResult,
    SignalTrace,
    cooling_relation,
    echo_envelope,
    fit_coherence_time,
    fit_damped_oscillation,
    measure_echo,
    oscillation_period,
    photons_per_coherence,
)
from .dynamics import ShiftProtocol, evolve_with_jumps, run_ensemble, step_coherent  # noqa: E402
from .experiment import (  # noqa: E402
    InitialStateSpec,
    prepare_initial_state,
    run_echo,
    run_oscillation,
    scan_delays,
    scan_detuning,
)
from .grid import Grid, WaveFunction  # noqa: E402
from .lattice import RB85, AtomSpecies, LatticeParams  # noqa: E402
from .spectral import project, solve_eigensystem  # noqa: E402

__all__ = [
    "AtomSpecies", "EchoMeasurement", "FitResult", "Grid", "InitialStateSpec", "LatticeParams",
    "RB85", "ShiftProtocol", "SignalTrace", "WaveFunction", "cooling_relation", "echo_envelope",
    "evolve_with_jumps", "fit_coherence_time", "fit_damped_oscillation", "measure_echo",
    "oscillation_period", "photons_per_coherence", "prepare_initial_state", "project",
    "run_echo", "run_ensemble", "run_oscillation", "scan_delays", "scan_detuning",
    "solve_eigensystem", "step_coherent",
]
