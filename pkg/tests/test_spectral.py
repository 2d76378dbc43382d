import math

import numpy as np
import pytest

from wpecho.errors import UsageError
from wpecho.grid import Grid, WaveFunction
from wpecho.lattice import HBAR, RB85, LatticeParams, osc_frequency
from wpecho.spectral import (
    ModeDecomposition,
    apply_hamiltonian,
    mean_transition_frequency,
    phase_alignment,
    project,
    reconstruct,
    solve_eigensystem,
)


def _overlaps(es):
    return (np.conj(es.states) @ es.states.T) * es.grid.spacing


def test_states_are_orthonormal(eigensystem):
    gram = _overlaps(eigensystem)
    np.testing.assert_allclose(gram, np.eye(len(eigensystem)), atol=1e-10)


def test_energies_are_sorted_and_residuals_small(eigensystem):
    assert np.all(np.diff(eigensystem.energies) >= 0)
    assert eigensystem.residuals.max() < 1e-8


def test_default_count_is_bound_states_plus_ten(eigensystem):
    assert len(eigensystem) == eigensystem.n_bound + 10


def test_lowest_band_is_localised(eigensystem):
    assert eigensystem.state(0).position_spread() < 0.1


def test_residual_against_grid_operator(eigensystem):
    n = 5
    h_phi = apply_hamiltonian(eigensystem.states[n], 831, 0.0, eigensystem.grid)
    e = eigensystem.energies_recoil[n]
    assert np.linalg.norm(h_phi - e * eigensystem.states[n]) < 1e-8 * abs(e) * np.linalg.norm(
        eigensystem.states[n])


def test_free_particle_spectrum(grid):
    es = solve_eigensystem(LatticeParams(depth=0.0), 0.0, grid, n_states=9)
    # cell-periodic plane waves: momenta 0, +-2, +-4, ... (hbar k), E = p^2 E_R
    np.testing.assert_allclose(es.energies_recoil, [0, 4, 4, 16, 16, 36, 36, 64, 64], atol=1e-9)


def test_degenerate_doublets_are_even_first(grid):
    es = solve_eigensystem(LatticeParams(depth=0.0), 0.0, grid, n_states=9)
    np.testing.assert_allclose(es.parities, [1, 1, -1, 1, -1, 1, -1, 1, -1], atol=1e-9)


def test_deep_harmonic_limit():
    depth = 1e4
    es = solve_eigensystem(LatticeParams(depth=depth), 0.0, Grid(), n_states=4)
    gap = es.energies_recoil[1] - es.energies_recoil[0]
    assert gap == pytest.approx(2 * math.sqrt(depth), rel=0.02)


def test_matches_dense_position_space_diagonalisation():
    # brute force: full-grid Hamiltonian built column by column from the FFT operator
    grid = Grid(n_points=256, n_wells=4)
    depth = 3000.0
    basis = np.eye(grid.n_points, dtype=complex)
    h = np.column_stack([apply_hamiltonian(basis[:, j], depth, 0.0, grid)
                         for j in range(grid.n_points)])
    dense = np.linalg.eigvalsh(0.5 * (h + h.conj().T))
    es = solve_eigensystem(LatticeParams(depth=depth), 0.0, grid, n_states=3)
    # deep wells: the lowest band is flat, so the full grid's minimum is the sector's E0
    assert dense[0] == pytest.approx(es.energies_recoil[0], rel=1e-6)


def test_oscillation_frequency_of_displaced_packet(eigensystem, shifted_eigensystem):
    # The spacing E1 - E0 is about 14% above hbar*w_osc because w_osc already
    # averages over anharmonic levels; the packet's coherence-weighted spacing is
    # the comparable quantity.
    dec = project(eigensystem.state(0), shifted_eigensystem)
    omega = mean_transition_frequency(dec, shifted_eigensystem.energies)
    assert omega == pytest.approx(osc_frequency(831), rel=0.05)


def test_too_many_states_is_a_usage_error(grid, lattice):
    with pytest.raises(UsageError):
        solve_eigensystem(lattice, 0.0, grid, n_states=grid.n_points // 4 + 1)


def test_translation_invariance_of_energies(eigensystem, grid, lattice):
    shifted = solve_eigensystem(lattice, 0.0625, grid)
    np.testing.assert_allclose(shifted.energies, eigensystem.energies, rtol=1e-10)


def test_states_translate_with_the_lattice(eigensystem, grid, lattice):
    steps = 8  # 8 grid steps = 0.0625 lambda
    shifted = solve_eigensystem(lattice, steps * grid.spacing, grid)
    for n in range(6):
        moved = np.roll(eigensystem.states[n], steps)
        overlap = abs(np.vdot(moved, shifted.states[n])) * grid.spacing
        assert overlap == pytest.approx(1.0, abs=1e-9)


class TestProject:
    def test_eigenstate_projects_onto_itself(self, eigensystem):
        c = project(eigensystem.state(3), eigensystem).coefficients
        expected = np.zeros(len(eigensystem))
        expected[3] = 1
        np.testing.assert_allclose(np.abs(c), expected, atol=1e-10)

    def test_equal_superposition(self, eigensystem):
        psi = WaveFunction((eigensystem.states[0] + eigensystem.states[1]) / math.sqrt(2),
                           eigensystem.grid)
        pops = project(psi, eigensystem).populations
        np.testing.assert_allclose(pops[:2], [0.5, 0.5], atol=1e-10)

    def test_displaced_ground_state_is_complete(self, eigensystem, shifted_eigensystem):
        dec = project(eigensystem.state(0), shifted_eigensystem)
        assert dec.kept_fraction > 0.99
        assert np.count_nonzero(dec.populations > 1e-3) > 3

    def test_grid_mismatch(self, eigensystem):
        other = Grid(n_points=512)
        psi = WaveFunction(np.ones(512), other).normalized()
        with pytest.raises(UsageError):
            project(psi, eigensystem)

    def test_reconstruct_is_identity_on_span(self, eigensystem):
        rng = np.random.default_rng(3)
        c = rng.normal(size=len(eigensystem)) + 1j * rng.normal(size=len(eigensystem))
        c /= np.linalg.norm(c)
        psi = reconstruct(ModeDecomposition(c, 1.0), eigensystem)
        np.testing.assert_allclose(project(psi, eigensystem).coefficients, c, atol=1e-8)


class TestPhaseAlignment:
    def test_aligned_at_zero(self, eigensystem, shifted_eigensystem):
        dec = project(eigensystem.state(0), shifted_eigensystem)
        assert phase_alignment(dec, shifted_eigensystem.energies, 0.0) == pytest.approx(1.0)

    def test_single_mode(self):
        dec = ModeDecomposition(np.array([1.0 + 0j]), 1.0)
        assert phase_alignment(dec, [3e-30], 1e-3) == pytest.approx(1.0)

    def test_two_modes_closed_form(self):
        omega = 2 * math.pi * 1e5
        dec = ModeDecomposition(np.array([1, 1]) / math.sqrt(2) + 0j, 1.0)
        energies = [0.0, HBAR * omega]
        for t in np.linspace(0, 2e-5, 17):
            assert phase_alignment(dec, energies, t) == pytest.approx(abs(math.cos(omega * t / 2)),
                                                                      abs=1e-12)
        assert phase_alignment(dec, energies, 2 * math.pi / omega) == pytest.approx(1.0)

    def test_global_energy_offset_is_irrelevant(self, eigensystem, shifted_eigensystem):
        dec = project(eigensystem.state(0), shifted_eigensystem)
        e = shifted_eigensystem.energies
        t = 13.7e-6
        a = phase_alignment(dec, e, t)
        b = phase_alignment(dec, e + 250 * RB85.recoil_energy, t)
        assert a == pytest.approx(b, abs=1e-10)
        assert 0 <= a <= 1

    def test_empty_decomposition(self):
        with pytest.raises(UsageError):
            phase_alignment(ModeDecomposition(np.array([], dtype=complex), 0.0), [], 0.0)

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            phase_alignment(ModeDecomposition(np.ones(2, dtype=complex), 1.0), [0.0], 0.0)
