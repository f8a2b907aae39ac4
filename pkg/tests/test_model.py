"""
Unit tests for the Model module.

Tests model descriptions including:
- Nonlinearity values and derivatives
- Potential families and bounds
- Model validation against grids
- Coercivity constants and the Gagliardo-Nirenberg estimate
- The sufficient hylomorphy condition and normalization
"""

import numpy as np
import pytest

from src.errors import ConfigurationError, DomainError
from src.grid import build_grid
from src.model import (
    AXIAL_PERIODIC,
    LATTICE,
    NKG,
    NKG_POWER,
    NSE,
    NSE_POWER,
    NSE_VORTEX,
    ModelSpec,
    Nonlinearity,
    Potential,
    check_hylomorphy_hypothesis,
    coercivity_constants,
    estimate_gn_constant,
    eval_W,
    eval_Wprime,
    hylomorphy_margin,
    normalize_quadratic_part,
    resolve_coercivity,
)


@pytest.fixture
def cubic_nse():
    """W(s) = -s^4 / 2."""
    return Nonlinearity(NSE_POWER, exponent=4, coefficient=2.0)


@pytest.fixture
def cubic_nkg():
    """W(s) = s^2 / 2 - s^4 / 4."""
    return Nonlinearity(NKG_POWER, exponent=4, coefficient=1.0, mass=1.0)


@pytest.fixture
def line():
    return build_grid({'dims': [[-10.0, 10.0, 256]]})


class TestNonlinearity:
    """Test W and its derivatives."""

    def test_cubic_nse_values(self, cubic_nse):
        assert eval_W(cubic_nse, 1.0) == pytest.approx(-0.5)
        assert eval_W(cubic_nse, 2.0) == pytest.approx(-8.0)
        assert eval_Wprime(cubic_nse, 1.0) == pytest.approx(-2.0)

    def test_nkg_includes_mass_term(self, cubic_nkg):
        assert eval_W(cubic_nkg, 1.0) == pytest.approx(0.25)
        assert cubic_nkg.quadratic_coefficient == 1.0

    def test_values_depend_on_modulus(self, cubic_nse):
        assert eval_W(cubic_nse, -1.5) == eval_W(cubic_nse, 1.5)

    def test_derivative_matches_finite_difference(self):
        nl = Nonlinearity(NKG_POWER, exponent=4, coefficient=1.0, mass=1.0,
                          stabilizer_coefficient=0.0625, stabilizer_exponent=6)
        s = np.linspace(0.1, 3.0, 50)
        h = 1e-6
        numeric = (nl.value(s + h) - nl.value(s - h)) / (2 * h)
        np.testing.assert_allclose(nl.derivative(s), numeric, rtol=1e-6, atol=1e-8)

    def test_complex_derivative_keeps_phase(self, cubic_nse):
        psi = np.array([2.0 * np.exp(0.3j)])
        value = cubic_nse.complex_derivative(psi)
        assert np.angle(value[0]) == pytest.approx(0.3 - np.pi)
        assert abs(value[0]) == pytest.approx(abs(eval_Wprime(cubic_nse, 2.0)))

    def test_derivative_over_s_is_finite_at_zero(self, cubic_nkg):
        assert cubic_nkg.derivative_over_s(0.0) == pytest.approx(1.0)

    def test_growth_exponents(self, cubic_nse):
        assert cubic_nse.growth_exponents() == (4, 4)
        stabilized = Nonlinearity(NSE_POWER, 4, 2.0, stabilizer_coefficient=1.0, stabilizer_exponent=6)
        assert stabilized.growth_exponents() == (4, 6)

    @pytest.mark.parametrize("kwargs, message", [
        (dict(family="cubic", exponent=4, coefficient=1.0), "Unknown nonlinearity"),
        (dict(family=NSE_POWER, exponent=2, coefficient=1.0), "exceed 2"),
        (dict(family=NSE_POWER, exponent=4, coefficient=-1.0), ">= 0"),
        (dict(family=NKG_POWER, exponent=4, coefficient=1.0), "positive mass"),
        (dict(family=NSE_POWER, exponent=4, coefficient=1.0, mass=1.0), "no mass"),
        (dict(family=NSE_POWER, exponent=4, coefficient=1.0,
              stabilizer_coefficient=1.0, stabilizer_exponent=3), "Stabilizer exponent"),
    ])
    def test_invalid_nonlinearities(self, kwargs, message):
        with pytest.raises(ConfigurationError, match=message):
            Nonlinearity(**kwargs).validate()


class TestPotential:
    """Test potential families."""

    def test_constant(self):
        v = Potential(base=2.0)
        assert np.all(v.evaluate(np.linspace(0, 1, 5)) == 2.0)
        assert v.lower_bound == v.upper_bound == 2.0

    def test_lattice_bounds_and_period(self):
        v = Potential(LATTICE, base=1.0, amplitude=0.5, period_matrix=((2.0, 0.0), (0.0, 1.0)))
        x = np.linspace(-3, 3, 41)
        y = np.linspace(-2, 2, 41)
        base = v.evaluate(x, y)
        np.testing.assert_allclose(v.evaluate(x + 2.0, y), base, atol=1e-12)
        np.testing.assert_allclose(v.evaluate(x, y + 1.0), base, atol=1e-12)
        assert np.min(base) >= 1.0 and np.max(base) <= 1.5 + 1e-12
        assert v.upper_bound == 1.5

    def test_ceiling_clips(self):
        v = Potential(AXIAL_PERIODIC, base=1.0, amplitude=1.0, ceiling=1.2)
        assert np.max(v.evaluate(np.linspace(0, 1, 11))) == pytest.approx(1.2)
        assert v.upper_bound == 1.2

    def test_axial_potential_on_cylindrical_grid(self):
        grid = build_grid({'kind': 'cylindrical', 'dims': [[0, 4, 8], [0, 1, 8]],
                           'boundary': ['dirichlet-zero', 'periodic']})
        values = Potential(AXIAL_PERIODIC, amplitude=0.2).sample(grid)
        assert values.shape == grid.shape
        np.testing.assert_allclose(values[0], values[-1])

    def test_lattice_rejected_on_cylindrical_grid(self):
        grid = build_grid({'kind': 'cylindrical', 'dims': [[0, 4, 8], [0, 1, 8]],
                           'boundary': ['dirichlet-zero', 'periodic']})
        with pytest.raises(ConfigurationError):
            Potential(LATTICE, amplitude=0.2).sample(grid)

    def test_singular_period_matrix(self):
        with pytest.raises(ConfigurationError, match="singular"):
            Potential(LATTICE, period_matrix=((1.0, 1.0), (1.0, 1.0))).validate()


class TestModelSpec:
    """Test model validation."""

    def test_valid_nse(self, cubic_nse, line):
        ModelSpec(NSE, cubic_nse, a=1.0, s=3.0).validate(line)

    def test_supercritical_exponent_rejected(self, line):
        spec = ModelSpec(NSE, Nonlinearity(NSE_POWER, 6, 1.0), a=1.0, s=3.0)
        with pytest.raises(ConfigurationError, match="Subcritical growth hypothesis violated"):
            spec.validate(line)

    def test_potential_below_one_suggests_normalize(self, cubic_nse):
        spec = ModelSpec(NSE, cubic_nse, Potential(base=0.5), a=1.0, s=3.0)
        with pytest.raises(ConfigurationError, match="normalize"):
            spec.validate()

    def test_nse_needs_positive_a(self, cubic_nse):
        with pytest.raises(ConfigurationError, match="a > 0"):
            ModelSpec(NSE, cubic_nse, a=0.0).validate()

    def test_nkg_rejects_potential(self, cubic_nkg):
        with pytest.raises(ConfigurationError, match="no external potential"):
            ModelSpec(NKG, cubic_nkg, Potential()).validate()

    def test_family_must_match_equation(self, cubic_nkg):
        with pytest.raises(ConfigurationError, match="nse-power"):
            ModelSpec(NSE, cubic_nkg, a=1.0, s=3.0).validate()

    def test_winding_needs_vortex_equation(self, cubic_nse):
        with pytest.raises(ConfigurationError, match="NSE-VORTEX"):
            ModelSpec(NSE, cubic_nse, winding=1, a=1.0, s=3.0).validate()

    def test_vortex_needs_cylindrical_grid(self, line):
        spec = ModelSpec(NSE_VORTEX, Nonlinearity(NSE_POWER, 3, 3.0), winding=1, a=1.0, s=3.0)
        with pytest.raises(ConfigurationError, match="cylindrical"):
            spec.validate(line)

    def test_nkg_growth_limit_in_three_dimensions(self):
        grid = build_grid({'dims': [[0, 1, 4]] * 3})
        spec = ModelSpec(NKG, Nonlinearity(NKG_POWER, 6, 1.0, mass=1.0))
        with pytest.raises(ConfigurationError, match="Growth hypothesis"):
            spec.validate(grid)


class TestCoercivity:
    """Test coercivity constants."""

    @pytest.mark.parametrize("N, p, q, gamma, gamma_prime, s", [
        (3, 3, 1.5, 4.0 / 3.0, 4.0, 3.0),
        (1, 4, 1.0, 2.0, 2.0, 3.0),
        (2, 3, 1.0, 2.0, 2.0, 2.0),
    ])
    def test_exponents(self, N, p, q, gamma, gamma_prime, s):
        constants = coercivity_constants(N, p, 1.0, 1.0)
        assert constants.q == pytest.approx(q)
        assert constants.gamma == pytest.approx(gamma)
        assert constants.gamma_prime == pytest.approx(gamma_prime)
        assert constants.s == pytest.approx(s)
        assert constants.a > 0.0

    def test_exponent_outside_range(self):
        with pytest.raises(DomainError):
            coercivity_constants(3, 4, 1.0, 1.0)

    def test_gn_estimate_dominates_sech_ratio(self, line):
        """Test the estimate bounds the interpolation ratio of a sech profile."""
        p = 4.0
        theta = 0.5 - 1.0 / p
        u = 1.0 / np.cosh(line.coords[0])
        lp = np.sum(line.weights * u ** p) ** (1.0 / p)
        grad = np.sqrt(line.grad_inner_values(u, u))
        l2 = np.sqrt(np.sum(line.weights * u ** 2))
        ratio = lp / (grad ** theta * l2 ** (1.0 - theta))
        estimate = estimate_gn_constant(1, p, line, max_iters=20)
        assert np.isfinite(estimate)
        assert estimate >= 1.1 * ratio * (1.0 - 1e-9)

    def test_resolve_fills_weights(self, cubic_nse, line):
        spec = resolve_coercivity(ModelSpec(NSE, cubic_nse), line)
        assert spec.a > 0.0
        assert spec.s == pytest.approx(3.0)


class TestHylomorphyHypothesis:
    """Test the sufficient condition and normalization."""

    def test_nse_margin_formula(self, cubic_nse):
        spec = ModelSpec(NSE, cubic_nse, a=1.0, s=3.0)
        assert hylomorphy_margin(spec, 1.0, (1.0, 1.0)) == pytest.approx(0.5)

    def test_nkg_margin_formula(self, cubic_nkg):
        spec = ModelSpec(NKG, cubic_nkg)
        assert hylomorphy_margin(spec, 2.0) == pytest.approx(2.0 - (2.0 - 4.0))

    def test_focusing_nse_holds(self, cubic_nse):
        check = check_hylomorphy_hypothesis(ModelSpec(NSE, cubic_nse, a=1.0, s=3.0))
        assert check.holds
        assert check.margin > 0.0

    def test_defocusing_model_fails(self):
        nl = Nonlinearity(NSE_POWER, 4, 0.0)
        spec = ModelSpec(NSE, nl, Potential(LATTICE, amplitude=0.5), a=1.0, s=3.0)
        check = check_hylomorphy_hypothesis(spec)
        assert not check.holds
        assert check.to_dict()['potential_bounds'] == [1.0, 1.5]

    def test_normalize_shifts_frequency(self, cubic_nse):
        spec = ModelSpec(
            NSE,
            Nonlinearity(NSE_POWER, 4, 2.0, quadratic=1.0),
            Potential(base=3.0),
            a=1.0, s=3.0,
        )
        normalized, shift = normalize_quadratic_part(spec)
        assert shift == pytest.approx(2.5)
        assert normalized.nonlinearity.quadratic == 0.0
        assert normalized.effective_potential.base == 1.0
        normalized.validate()

    def test_normalize_leaves_nkg_alone(self, cubic_nkg):
        spec = ModelSpec(NKG, cubic_nkg)
        assert normalize_quadratic_part(spec) == (spec, 0.0)
