import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wpecho.errors import ConfigurationError, DomainError
from wpecho.lattice import (
    HBAR,
    RB85,
    AtomSpecies,
    LatticeParams,
    calibrate_depth,
    dephasing_spread,
    depth_from_frequency,
    derived_scales,
    osc_frequency,
    potential,
    scattering_rate,
)

LAM = RB85.wavelength
E_R = RB85.recoil_energy


def test_recoil_constants_from_first_principles():
    k = 2 * math.pi / 780e-9
    m = 85 * 1.66053906660e-27
    assert RB85.recoil_frequency == pytest.approx(HBAR * k**2 / (2 * m), rel=1e-6)
    assert RB85.recoil_energy == pytest.approx(HBAR * RB85.recoil_frequency, rel=1e-15)


def test_species_rejects_nonpositive_constants():
    with pytest.raises(ConfigurationError):
        AtomSpecies(mass=0.0)
    with pytest.raises(ConfigurationError):
        AtomSpecies(wavelength=-1.0)


@pytest.mark.parametrize("changes", [
    {"depth": -1.0}, {"shift": 0.25}, {"shift": -0.01}, {"depth_spread": 1.0},
    {"shift_ramp_time": -1e-6}, {"detuning": math.nan},
])
def test_lattice_params_invariants(changes):
    with pytest.raises(ConfigurationError):
        LatticeParams(**changes)


class TestPotential:
    params = LatticeParams(depth=831)
    shift = 0.1 * LAM

    def test_minimum_at_shift(self):
        assert potential(self.shift, self.shift, self.params) == pytest.approx(-831 * E_R)

    def test_node_quarter_wavelength_away(self):
        assert abs(potential(self.shift + LAM / 4, self.shift, self.params)) < 1e-12 * 831 * E_R

    def test_half_wavelength_period(self):
        z = np.linspace(-LAM, LAM, 1001)
        a = potential(z, self.shift, self.params)
        b = potential(z + LAM / 2, self.shift, self.params)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * 831 * E_R)


class TestScatteringRate:
    def test_scattering_time_matches_reference_value(self):
        tau = 1 / scattering_rate(831, -7.8)
        assert 0.36e-6 <= tau <= 0.44e-6

    def test_closed_form(self):
        assert scattering_rate(831, -7.8) == pytest.approx(831 * RB85.recoil_frequency / 7.8)

    def test_vanishes_without_light(self):
        assert scattering_rate(0.0, -7.8) == 0.0

    def test_zero_detuning_is_a_domain_error(self):
        with pytest.raises(DomainError):
            scattering_rate(831, 0.0)

    def test_rate_times_time_is_one(self):
        scales = derived_scales(LatticeParams())
        assert scales.scattering_rate * scales.scattering_time == 1.0

    @given(st.floats(1, 5000), st.floats(-50, -0.1), st.floats(0.1, 10))
    def test_homogeneous_in_depth_over_detuning(self, depth, detuning, factor):
        base = scattering_rate(depth, detuning)
        assert scattering_rate(depth * factor, detuning) == pytest.approx(factor * base, rel=1e-12)
        assert scattering_rate(depth, detuning * factor) == pytest.approx(base / factor, rel=1e-12)


class TestOscillationFrequency:
    def test_reference_period(self):
        assert 2 * math.pi / osc_frequency(831) == pytest.approx(5.2e-6, rel=0.02)

    def test_calibrated_depth_period(self):
        assert 2 * math.pi / osc_frequency(823) == pytest.approx(5.2e-6, rel=0.03)

    def test_square_root_scaling(self):
        assert osc_frequency(4 * 300) == pytest.approx(2 * osc_frequency(300), rel=1e-14)

    @given(st.floats(1e-3, 1e5))
    def test_round_trip(self, depth):
        assert depth_from_frequency(osc_frequency(depth)) == pytest.approx(depth, rel=1e-12)

    def test_requires_positive_depth(self):
        with pytest.raises(DomainError):
            osc_frequency(0.0)


class TestDephasingSpread:
    def test_reference_dephasing_time(self):
        assert 1 / dephasing_spread(osc_frequency(831)) == pytest.approx(7e-6, abs=1e-6)

    def test_dephasing_time_falls_with_depth(self):
        depths = np.linspace(100, 1000, 50)
        times = [1 / dephasing_spread(osc_frequency(u)) for u in depths]
        assert np.all(np.diff(times) < 0)

    def test_boundary_is_a_domain_error(self):
        omega = RB85.recoil_frequency / 0.14
        with pytest.raises(DomainError, match="too shallow"):
            dephasing_spread(omega * (1 - 1e-12))

    def test_shallow_lattice_is_rejected(self):
        with pytest.raises(DomainError):
            dephasing_spread(osc_frequency(1.0))


class TestCalibration:
    def test_anchor_point(self):
        assert calibrate_depth(56.5, -7.8) == pytest.approx(823.0, rel=1e-12)

    def test_linear_in_intensity(self):
        assert calibrate_depth(113.0, -7.8) == pytest.approx(1646.0, rel=1e-12)

    def test_inverse_in_detuning(self):
        assert calibrate_depth(56.5, -15.6) == pytest.approx(411.5, rel=1e-12)

    def test_zero_detuning(self):
        with pytest.raises(DomainError):
            calibrate_depth(56.5, 0.0)
