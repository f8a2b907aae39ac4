"""
Unit tests for the Verify module.

Tests the property suite including:
- Check selection per model
- A clean run on a well-posed Schroedinger model
- Conservation checks for Klein-Gordon
- Result serialisation
"""

from unittest.mock import patch

import pytest

from src.functionals import FunctionalValues, coercivity_offset
from src.grid import build_grid
from src.model import (
    LATTICE,
    NKG,
    NKG_POWER,
    NSE,
    NSE_POWER,
    ModelSpec,
    Nonlinearity,
    Potential,
    resolve_coercivity,
)
from src.verify import CheckResult, PropertySuite, run_property_suite


@pytest.fixture(scope="module")
def line():
    return build_grid({'dims': [[-10.0, 10.0, 128]]})


@pytest.fixture(scope="module")
def nse_spec(line):
    spec = ModelSpec(NSE, Nonlinearity(NSE_POWER, 4, 2.0), s=3.0, delta=0.01)
    return resolve_coercivity(spec, line)


class TestCheckResult:
    """Test result records."""

    def test_to_dict(self):
        result = CheckResult(name="gradient_E", value=1e-9, bound=1e-6, passed=True)
        assert result.to_dict() == {
            'name': "gradient_E",
            'value': 1e-9,
            'bound': 1e-6,
            'passed': True,
            'detail': "",
        }


class TestPropertySuite:
    """Test the property checks."""

    def test_nse_suite_passes(self, nse_spec, line):
        suite = PropertySuite(nse_spec, line, samples=50, evolve_steps=50, seed=3)
        results = suite.run()
        failed = [r.name for r in results if not r.passed]
        assert failed == []
        assert suite.passed_count == len(results)

    def test_nse_check_selection(self, nse_spec, line):
        names = {r.name for r in run_property_suite(nse_spec, line, samples=10, evolve_steps=20)}
        assert {"gradient_J", "charge_homogeneity", "coercivity_sampling",
                "penalised_lower_bound", "rayleigh_above_potential_floor"} <= names
        assert "nkg_small_amplitude_bound" not in names
        assert "potential_periodicity" not in names

    def test_lattice_potential_adds_periodicity(self):
        grid = build_grid({'dims': [[-4.0, 4.0, 32], [-4.0, 4.0, 32]]})
        spec = resolve_coercivity(
            ModelSpec(NSE, Nonlinearity(NSE_POWER, 3, 3.0), Potential(LATTICE, amplitude=0.5), s=2.0),
            grid,
        )
        suite = PropertySuite(spec, grid, samples=5, evolve_steps=10)
        suite.check_potential_periodicity()
        assert suite.results[0].name == "potential_periodicity"
        assert suite.results[0].passed

    def test_nkg_conservation(self, line):
        spec = ModelSpec(NKG, Nonlinearity(NKG_POWER, 4, 1.0, mass=1.0))
        suite = PropertySuite(spec, line, samples=10, evolve_steps=40)
        suite.check_conservation()
        by_name = {r.name: r for r in suite.results}
        assert by_name["charge_conservation"].passed
        assert by_name["energy_conservation"].bound == 1e-6
        assert by_name["energy_conservation"].passed
        assert by_name["time_reversibility"].bound == 1e-10
        assert by_name["time_reversibility"].passed
        assert by_name["time_reversibility"].detail == "1000 steps"

    def test_nse_energy_bound(self, nse_spec, line):
        suite = PropertySuite(nse_spec, line, samples=10, evolve_steps=40, seed=1)
        suite.check_conservation()
        energy = {r.name: r for r in suite.results}["energy_conservation"]
        assert energy.bound == 1e-6
        assert energy.passed

    def test_coercivity_margins_are_absolute(self, nse_spec, line):
        """Test margins are E + a|C|^s and J - (delta/2 Phi - M) without rescaling."""
        phi = 5.0 + 2.0 * nse_spec.a
        j_delta = 5.0 + nse_spec.delta * phi
        values = FunctionalValues(energy=5.0, charge=1.0, phi=phi, lam=5.0, j_delta=j_delta)
        suite = PropertySuite(nse_spec, line, samples=3)
        with patch('src.verify.evaluate_all', return_value=values):
            suite.check_coercivity_sampling()
        by_name = {r.name: r for r in suite.results}
        assert by_name["coercivity_sampling"].value == pytest.approx(5.0 + nse_spec.a)
        offset = coercivity_offset(nse_spec.a, nse_spec.s, nse_spec.delta)
        expected = j_delta - (0.5 * nse_spec.delta * phi - offset)
        assert by_name["penalised_lower_bound"].value == pytest.approx(expected)

    def test_nkg_selection(self, line):
        spec = ModelSpec(NKG, Nonlinearity(NKG_POWER, 4, 1.0, mass=1.0))
        suite = PropertySuite(spec, line, samples=10, evolve_steps=20)
        names = {r.name for r in suite.run()}
        assert "nkg_small_amplitude_bound" in names
        assert "coercivity_sampling" not in names
