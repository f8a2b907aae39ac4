"""
Unit tests for the Functionals module.

Tests the discrete functionals including:
- Energy and charge of exact solitons
- Gradients against finite differences
- The charge floor
- Rayleigh quotient minimum, splitting and coercivity helpers
"""

import numpy as np
import pytest

from src.errors import DomainError, UsageError
from src.functionals import (
    charge,
    charge_floor,
    coercivity_offset,
    energy,
    evaluate_all,
    first_variation,
    gradient_check,
    nkg_small_amplitude_bound,
    objective,
    potential_values,
    rayleigh_quotient_min,
    sharp_seminorm,
    splitting_defect,
)
from src.grid import NKGState, build_grid, inner, norm, random_smooth_field
from src.model import (
    LATTICE,
    NKG,
    NKG_POWER,
    NSE,
    NSE_POWER,
    NSE_VORTEX,
    ModelSpec,
    Nonlinearity,
    Potential,
)


@pytest.fixture(scope="module")
def line():
    return build_grid({'dims': [[-20.0, 20.0, 2048]]})


@pytest.fixture(scope="module")
def nse_spec():
    return ModelSpec(NSE, Nonlinearity(NSE_POWER, 4, 2.0), a=1.0, s=3.0, delta=0.01)


@pytest.fixture(scope="module")
def nkg_spec():
    return ModelSpec(NKG, Nonlinearity(NKG_POWER, 4, 1.0, mass=1.0), delta=0.01)


def _sech(grid, amplitude, width):
    return grid.sample(lambda x: amplitude / np.cosh(width * x))


def _nkg_soliton(grid, omega):
    kappa = np.sqrt(1.0 - omega ** 2)
    u = _sech(grid, np.sqrt(2.0) * kappa, kappa)
    return NKGState(u, u * (-1j * omega))


class TestExactSolitons:
    """Test E and C against closed-form values."""

    @pytest.mark.parametrize("a", [0.5, 1.0])
    def test_nse_sech(self, line, nse_spec, a):
        u = _sech(line, a, a)
        assert charge(u, nse_spec) == pytest.approx(2.0 * a, rel=1e-7)
        assert energy(u, nse_spec) == pytest.approx(2.0 * a - a ** 3 / 3.0, rel=1e-4)

    def test_nkg_soliton(self, line, nkg_spec):
        state = _nkg_soliton(line, 0.8)
        values = evaluate_all(state, nkg_spec)
        assert values.energy == pytest.approx(1.824, rel=1e-4)
        assert values.charge == pytest.approx(-1.92, rel=1e-6)
        assert values.lam == pytest.approx(0.95, rel=1e-4)

    def test_phi_and_j(self, line, nse_spec):
        u = _sech(line, 1.0, 1.0)
        values = evaluate_all(u, nse_spec)
        assert values.phi == pytest.approx(values.energy + 2.0 * 8.0, rel=1e-6)
        assert values.j_delta == pytest.approx(values.lam + 0.01 * values.phi)
        assert values.to_dict()['defined'] is True


class TestChargeFloor:
    """Test the undefined region of Lambda and J."""

    def test_zero_state(self, line, nse_spec):
        values = evaluate_all(line.zeros(), nse_spec)
        assert values.lam is None and values.j_delta is None
        assert not values.defined

    def test_objective_raises_below_floor(self, line, nse_spec):
        with pytest.raises(DomainError, match="charge floor"):
            objective(line.zeros(), nse_spec, "J")

    def test_energy_defined_below_floor(self, line, nse_spec):
        assert objective(line.zeros(), nse_spec, "E")[0] == 0.0

    def test_floor_scales_with_volume(self, line):
        assert charge_floor(line) == pytest.approx(1e-10 * 40.0)


class TestGradients:
    """Test analytic first variations."""

    @pytest.mark.parametrize("which", ["E", "C", "Phi", "Lambda", "J"])
    def test_nse_gradients(self, nse_spec, which):
        grid = build_grid({'dims': [[-6.0, 6.0, 96]]})
        rng = np.random.default_rng(3)
        state = random_smooth_field(grid, rng)
        direction = random_smooth_field(grid, rng)
        assert gradient_check(state, nse_spec, which, direction) < 1e-6

    @pytest.mark.parametrize("which", ["E", "C", "Lambda", "J"])
    def test_nkg_gradients(self, nkg_spec, which):
        grid = build_grid({'dims': [[-6.0, 6.0, 96]]})
        rng = np.random.default_rng(4)

        def random_state():
            return NKGState(
                random_smooth_field(grid, rng, complex_values=True),
                random_smooth_field(grid, rng, complex_values=True),
            )

        assert gradient_check(random_state(), nkg_spec, which, random_state()) < 1e-6

    def test_vortex_gradient(self):
        grid = build_grid({'kind': 'cylindrical', 'dims': [[0.0, 8.0, 32], [-4.0, 4.0, 32]],
                           'boundary': ['dirichlet-zero', 'periodic']})
        spec = ModelSpec(NSE_VORTEX, Nonlinearity(NSE_POWER, 3, 3.0), winding=1, a=1.0, s=3.0)
        rng = np.random.default_rng(5)
        state = random_smooth_field(grid, rng)
        assert gradient_check(state, spec, "J", random_smooth_field(grid, rng)) < 1e-6

    def test_charge_gradient_is_twice_state(self, line, nse_spec):
        u = _sech(line, 1.0, 1.0)
        np.testing.assert_allclose(first_variation(u, nse_spec, "C").values, 2.0 * u.values)

    def test_unknown_functional(self, line, nse_spec):
        with pytest.raises(UsageError):
            objective(_sech(line, 1.0, 1.0), nse_spec, "H")

    def test_wrong_state_type(self, line, nkg_spec):
        with pytest.raises(UsageError, match="NKGState"):
            energy(line.zeros(), nkg_spec)

    def test_soliton_satisfies_euler_lagrange(self, line, nse_spec):
        """Test E'(u) = lambda C'(u) with lambda = 1 - a^2 / 2."""
        u = _sech(line, 1.0, 1.0)
        de = first_variation(u, nse_spec, "E")
        dc = first_variation(u, nse_spec, "C")
        multiplier = inner(de, dc) / inner(dc, dc)
        assert multiplier == pytest.approx(0.5, rel=1e-4)
        assert norm(de - dc * multiplier) / norm(de) < 1e-4


class TestRayleighQuotient:
    """Test the small-amplitude threshold."""

    def test_constant_potential_on_periodic_grid(self, nse_spec):
        grid = build_grid({'dims': [[-5.0, 5.0, 64]]})
        assert rayleigh_quotient_min(nse_spec, grid) == pytest.approx(1.0, abs=1e-7)

    def test_dirichlet_grid_lies_above_potential(self, nse_spec):
        grid = build_grid({'dims': [[0.0, 10.0, 100]], 'boundary': 'dirichlet-zero'})
        value = rayleigh_quotient_min(nse_spec, grid)
        assert value == pytest.approx(1.0 + 0.5 * (np.pi / 10.0) ** 2, rel=5e-3)

    def test_lattice_potential_bounds(self):
        grid = build_grid({'dims': [[-4.0, 4.0, 32], [-4.0, 4.0, 32]]})
        spec = ModelSpec(NSE, Nonlinearity(NSE_POWER, 3, 3.0),
                         Potential(LATTICE, amplitude=0.5), a=1.0, s=2.0)
        value = rayleigh_quotient_min(spec, grid)
        assert 1.0 <= value <= 1.5

    def test_nkg_returns_mass(self, nkg_spec, line):
        assert rayleigh_quotient_min(nkg_spec, line) == 1.0


class TestHelpers:
    """Test splitting, coercivity offset and the small-amplitude bound."""

    def test_disjoint_splitting(self, line, nse_spec):
        u = line.sample(lambda x: np.clip(1.0 - np.abs(x + 10.0) / 3.0, 0.0, None) ** 2)
        w = line.sample(lambda x: np.clip(1.0 - np.abs(x - 10.0) / 3.0, 0.0, None) ** 2)
        assert splitting_defect(nse_spec, "E", u, w) < 1e-12
        assert splitting_defect(nse_spec, "C", u, w) < 1e-12

    def test_overlapping_splitting_is_absolute(self, line, nse_spec):
        """Test opposite-sign overlapping bumps give |C(u + w) - C(u) - C(w)| = 2 |<u, w>|."""
        u = _sech(line, 1.0, 1.0)
        w = line.sample(lambda x: -0.5 / np.cosh(x - 0.5))
        signed = charge(u + w, nse_spec) - charge(u, nse_spec) - charge(w, nse_spec)
        assert signed < 0.0
        assert splitting_defect(nse_spec, "C", u, w) == pytest.approx(-signed, rel=1e-12)
        assert splitting_defect(nse_spec, "C", u, w) == pytest.approx(2.0 * abs(inner(u, w)), rel=1e-9)
        signed_e = energy(u + w, nse_spec) - energy(u, nse_spec) - energy(w, nse_spec)
        assert splitting_defect(nse_spec, "E", u, w) == pytest.approx(abs(signed_e), rel=1e-12)

    def test_splitting_only_for_e_and_c(self, line, nse_spec):
        with pytest.raises(UsageError):
            splitting_defect(nse_spec, "Lambda", line.zeros(), line.zeros())

    def test_coercivity_offset(self):
        assert coercivity_offset(1.0, 2.0, 0.5) == pytest.approx(1.0)
        assert coercivity_offset(0.0, 2.0, 0.5) == 0.0
        with pytest.raises(DomainError):
            coercivity_offset(1.0, 1.0, 0.5)

    def test_small_amplitude_bound(self, nkg_spec):
        assert nkg_small_amplitude_bound(nkg_spec, 0.1) == pytest.approx(np.sqrt(0.8))
        with pytest.raises(UsageError):
            nkg_small_amplitude_bound(
                ModelSpec(NSE, Nonlinearity(NSE_POWER, 4, 2.0), a=1.0, s=3.0), 0.1
            )

    def test_sharp_seminorm_scales_linearly(self, line, nkg_spec):
        state = _nkg_soliton(line, 0.8)
        assert sharp_seminorm(state * 2.0, nkg_spec) == pytest.approx(2.0 * sharp_seminorm(state, nkg_spec))

    def test_potential_values_are_read_only(self, line, nse_spec):
        values = potential_values(line, nse_spec)
        with pytest.raises(ValueError):
            values[0] = 5.0
