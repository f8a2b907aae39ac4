"""
Unit tests for the Evolve module.

Tests the time integrators and orbit monitoring including:
- Time step limits
- Conservation of charge and energy
- Standing waves and time reversibility
- Perturbed ensembles and orbital stability
- Lifting cylindrical vortex profiles to three dimensions
"""

import numpy as np
import pytest

from src.errors import ConfigurationError, DomainError, UsageError
from src.evolve import (
    GammaParams,
    angular_momentum_m3,
    axis_defect,
    check_dt,
    default_dt,
    dt_max,
    evolve_and_monitor,
    lift_vortex,
    lyapunov,
    perturb,
    reversibility_defect,
    run_ensemble,
    standing_wave_check,
    step_nkg,
    step_nse,
    winding_number,
)
from src.functionals import charge
from src.grid import NKGState, build_grid, norm
from src.hylomorphy import torus_test_function
from src.minimize import MinimizeOptions, minimize_constrained
from src.model import (
    AXIAL_PERIODIC,
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
    return build_grid({'dims': [[-15.0, 15.0, 512]]})


@pytest.fixture(scope="module")
def nse_spec():
    return ModelSpec(NSE, Nonlinearity(NSE_POWER, 4, 2.0), a=1.0, s=3.0)


@pytest.fixture(scope="module")
def nkg_spec():
    return ModelSpec(NKG, Nonlinearity(NKG_POWER, 4, 1.0, mass=1.0))


@pytest.fixture(scope="module")
def soliton(line):
    """Exact NSE ground state with frequency 1/2."""
    return line.sample(lambda x: 1.0 / np.cosh(x))


@pytest.fixture(scope="module")
def nkg_soliton():
    return _nkg_sech(build_grid({'dims': [[-20.0, 20.0, 512]]}))


def _nkg_sech(grid, omega=0.8):
    kappa = np.sqrt(1.0 - omega ** 2)
    u = grid.sample(lambda x: np.sqrt(2.0) * kappa / np.cosh(kappa * x))
    return NKGState(u, u * (-1j * omega))


@pytest.fixture(scope="module")
def nse_ground_state(soliton, nse_spec):
    """Discrete minimizer at C = 2 and its frequency."""
    opts = MinimizeOptions(max_iters=20000, tolerance=1e-8)
    return minimize_constrained(nse_spec, 2.0, soliton, opts)


@pytest.fixture(scope="module")
def nkg_ground_state(nkg_soliton, nkg_spec):
    """Discrete minimizer of the cubic model at C = -1.92 and its frequency."""
    opts = MinimizeOptions(max_iters=20000, tolerance=1e-8)
    return minimize_constrained(nkg_spec, -1.92, nkg_soliton, opts)


@pytest.fixture
def cylinder():
    return build_grid({
        'kind': 'cylindrical',
        'dims': [[0.0, 4.0, 32], [-3.0, 3.0, 24]],
        'boundary': ['dirichlet-zero', 'periodic'],
    })


class TestTimeStep:
    """Test time step limits."""

    def test_zero_step_rejected(self, line, nse_spec):
        with pytest.raises(ConfigurationError, match="non-zero"):
            check_dt(0.0, line, nse_spec)

    def test_nse_cap(self, line, nse_spec):
        assert dt_max(line, nse_spec) == 0.1
        with pytest.raises(ConfigurationError, match="exceeds"):
            check_dt(0.2, line, nse_spec)

    def test_nkg_cfl_limit(self, line, nkg_spec):
        h = line.spacings[0]
        assert dt_max(line, nkg_spec) == pytest.approx(0.9 * h / np.sqrt(1.0 + h * h))
        with pytest.raises(ConfigurationError):
            check_dt(h, line, nkg_spec)

    def test_negative_steps_allowed(self, line, nkg_spec):
        check_dt(-default_dt(line, nkg_spec), line, nkg_spec)

    def test_default_is_admissible(self, line, nse_spec, nkg_spec):
        for spec in (nse_spec, nkg_spec):
            assert 0.0 < default_dt(line, spec) <= dt_max(line, spec)


class TestSteppers:
    """Test single steps of both flows."""

    def test_nse_step_preserves_charge(self, soliton, nse_spec):
        psi = soliton.to_complex()
        before = charge(psi, nse_spec)
        for _ in range(20):
            psi = step_nse(psi, 0.01, nse_spec)
        assert charge(psi, nse_spec) == pytest.approx(before, rel=1e-12)

    def test_nkg_step_preserves_charge(self, nkg_soliton, nkg_spec):
        grid = nkg_soliton.grid
        state = nkg_soliton + NKGState(
            grid.sample(lambda x: 0.1 * np.exp(-(x - 1.0) ** 2)),
            grid.sample(lambda x: 0.05j * np.exp(-x ** 2), dtype=np.complex128),
        )
        before = charge(state, nkg_spec)
        dt = default_dt(state.grid, nkg_spec)
        for _ in range(50):
            state = step_nkg(state, dt, nkg_spec)
        assert charge(state, nkg_spec) == pytest.approx(before, rel=1e-10)

    def test_wrong_state_types(self, soliton, nkg_soliton, nse_spec, nkg_spec):
        with pytest.raises(UsageError):
            step_nse(nkg_soliton, 0.01, nse_spec)
        with pytest.raises(UsageError):
            step_nkg(soliton, 0.01, nkg_spec)


class TestMonitoring:
    """Test evolution with Lyapunov and distance monitoring."""

    def test_lyapunov_vanishes_on_reference(self, soliton, nse_spec):
        gamma = GammaParams.from_reference(soliton, nse_spec)
        assert lyapunov(gamma.e0, gamma.c0, gamma) == 0.0
        assert gamma.metric == "l2"

    def test_lyapunov_uses_signed_charge(self, nkg_soliton, nkg_spec):
        gamma = GammaParams.from_reference(nkg_soliton, nkg_spec)
        assert gamma.c0 < 0.0
        assert lyapunov(gamma.e0, -gamma.c0, gamma) == pytest.approx(4.0 * gamma.c0 ** 2)

    def test_soliton_stays_on_orbit(self, soliton, nse_spec):
        gamma = GammaParams.from_reference(soliton, nse_spec)
        report = evolve_and_monitor(soliton, 1.0, 0.01, nse_spec, gamma, sample_every=10)
        assert report.times[0] == 0.0
        assert report.times[-1] == pytest.approx(1.0)
        assert len(report.rows()) == 11
        assert report.max_charge_drift < 1e-10
        assert report.max_energy_drift < 1e-3
        assert report.max_orbital_distance < 1e-2
        assert not report.diverged

    def test_negative_final_time_rejected(self, soliton, nse_spec):
        gamma = GammaParams.from_reference(soliton, nse_spec)
        with pytest.raises(ConfigurationError):
            evolve_and_monitor(soliton, -1.0, 0.01, nse_spec, gamma)

    def test_on_sample_callback(self, soliton, nse_spec):
        gamma = GammaParams.from_reference(soliton, nse_spec)
        seen = []
        evolve_and_monitor(soliton, 0.1, 0.01, nse_spec, gamma, sample_every=5,
                           on_sample=lambda k, t, state: seen.append(k))
        assert seen == [0, 5, 10]

    def test_report_summary(self, soliton, nse_spec):
        gamma = GammaParams.from_reference(soliton, nse_spec)
        data = evolve_and_monitor(soliton, 0.1, 0.01, nse_spec, gamma).to_dict()
        assert data['samples'] == 2
        assert data['metric'] == "l2"


class TestConservation:
    """Test energy and charge drift over ten time units."""

    @pytest.mark.slow
    def test_nse_soliton(self, soliton, nse_spec):
        gamma = GammaParams.from_reference(soliton, nse_spec)
        report = evolve_and_monitor(soliton, 10.0, 5e-4, nse_spec, gamma, sample_every=1000)
        assert report.max_energy_drift <= 1e-6
        assert report.max_charge_drift <= 1e-10
        bound = (report.max_energy_drift * gamma.e0) ** 2 + (report.max_charge_drift * gamma.c0) ** 2
        assert max(report.lyapunov_series) <= bound * (1.0 + 1e-9) + 1e-300

    @pytest.mark.slow
    def test_nkg_soliton(self, nkg_soliton, nkg_spec):
        gamma = GammaParams.from_reference(nkg_soliton, nkg_spec)
        report = evolve_and_monitor(nkg_soliton, 10.0, 5e-4, nkg_spec, gamma, sample_every=1000)
        assert report.max_energy_drift <= 1e-6
        assert report.max_charge_drift <= 1e-6
        assert not report.diverged


class TestStandingWaves:
    """Test exp(-i omega t) rotation of solitons."""

    @pytest.mark.slow
    def test_nse_soliton_rotates_at_its_frequency(self, soliton, nse_spec):
        assert standing_wave_check(soliton, 0.5, 2.0, 0.005, nse_spec) < 5e-3

    @pytest.mark.slow
    def test_wrong_frequency_is_detected(self, soliton, nse_spec):
        assert standing_wave_check(soliton, 0.6, 2.0, 0.005, nse_spec) > 0.1

    @pytest.mark.slow
    def test_nkg_soliton_rotates_at_its_frequency(self, nkg_soliton, nkg_spec):
        dt = default_dt(nkg_soliton.grid, nkg_spec)
        assert standing_wave_check(nkg_soliton, 0.8, 5.0, dt, nkg_spec) < 1e-2

    @pytest.mark.slow
    def test_nse_minimizer_to_t10(self, nse_ground_state, nse_spec):
        assert nse_ground_state.omega == pytest.approx(0.5, abs=5e-3)
        deviation = standing_wave_check(
            nse_ground_state.minimizer, nse_ground_state.omega, 10.0, 1e-3, nse_spec, sample_every=100
        )
        assert deviation <= 1e-3

    @pytest.mark.slow
    def test_wrong_frequency_grows_to_order_one(self, nse_ground_state, nse_spec):
        deviation = standing_wave_check(
            nse_ground_state.minimizer, nse_ground_state.omega + 0.1, 10.0, 1e-2, nse_spec
        )
        assert deviation > 0.5

    @pytest.mark.slow
    def test_nkg_minimizer_to_t10(self, nkg_ground_state, nkg_spec):
        assert nkg_ground_state.omega == pytest.approx(0.8, abs=5e-3)
        deviation = standing_wave_check(
            nkg_ground_state.minimizer, nkg_ground_state.omega, 10.0, 5e-3, nkg_spec, sample_every=100
        )
        assert deviation <= 1e-3

    def test_zero_state_rejected(self, line, nse_spec):
        with pytest.raises(DomainError):
            standing_wave_check(line.zeros(), 0.5, 0.1, 0.01, nse_spec)


class TestReversibility:
    """Test forward then backward integration."""

    def test_nse_strang_is_reversible(self, soliton, nse_spec):
        assert reversibility_defect(soliton, 1000, 0.01, nse_spec) <= 1e-10

    def test_nkg_verlet_is_reversible(self, nkg_soliton, nkg_spec):
        dt = default_dt(nkg_soliton.grid, nkg_spec)
        assert reversibility_defect(nkg_soliton, 1000, dt, nkg_spec) <= 1e-10


class TestEnsemble:
    """Test perturbed ensembles."""

    def test_one_report_per_member(self, soliton, nse_spec):
        reports = run_ensemble(soliton, nse_spec, 0.1, 0.01, count=3, amplitude=1e-3, seed=11)
        assert len(reports) == 3
        assert all(0.0 < r.max_orbital_distance < 1e-2 for r in reports)

    def test_seed_makes_runs_repeatable(self, soliton, nse_spec):
        first = run_ensemble(soliton, nse_spec, 0.05, 0.01, count=1, amplitude=1e-3, seed=5)
        second = run_ensemble(soliton, nse_spec, 0.05, 0.01, count=1, amplitude=1e-3, seed=5)
        assert first[0].energy_series == second[0].energy_series

    def test_scaled_ensemble_moves_charge(self, soliton, nse_spec):
        reports = run_ensemble(soliton, nse_spec, 0.05, 0.01, count=1, amplitude=1e-6, scale=1.1)
        assert reports[0].charge_series[0] == pytest.approx(1.21 * 2.0, rel=1e-3)

    def test_empty_ensemble_rejected(self, soliton, nse_spec):
        with pytest.raises(ConfigurationError):
            run_ensemble(soliton, nse_spec, 0.1, 0.01, count=0, amplitude=1e-3)

    def test_perturbation_has_requested_relative_norm(self, soliton):
        rng = np.random.default_rng(4)
        moved = perturb(soliton, 0.01, rng)
        assert norm(moved - soliton.to_complex()) == pytest.approx(0.01 * norm(soliton), rel=1e-9)

    def test_perturbation_scales_each_nkg_component(self, nkg_soliton):
        moved = perturb(nkg_soliton, 0.01, np.random.default_rng(4))
        for after, before in ((moved.psi, nkg_soliton.psi), (moved.psi_hat, nkg_soliton.psi_hat)):
            assert norm(after - before) == pytest.approx(0.01 * norm(before), rel=1e-9)

    def test_real_perturbation_keeps_real_fields(self, soliton):
        moved = perturb(soliton, 0.1, np.random.default_rng(4), complex_values=False)
        assert not moved.is_complex


class TestOrbitalStability:
    """Test 1% perturbations of solitons stay close to the orbit up to t = 20."""

    @pytest.mark.slow
    def test_nse_soliton_at_two_resolutions(self, nse_spec):
        worst = []
        for points in (512, 1024):
            grid = build_grid({'dims': [[-20.0, 20.0, points]]})
            reference = grid.sample(lambda x: 1.0 / np.cosh(x))
            reports = run_ensemble(reference, nse_spec, 20.0, 0.01, count=2, amplitude=0.01,
                                   seed=3, sample_every=20)
            worst.append(max(r.max_orbital_distance for r in reports))
        assert max(worst) <= 5e-2
        assert 0.5 <= worst[0] / worst[1] <= 2.0

    @pytest.mark.slow
    def test_nkg_soliton_at_two_resolutions(self, nkg_spec):
        worst = []
        for points in (512, 1024):
            reference = _nkg_sech(build_grid({'dims': [[-20.0, 20.0, points]]}))
            dt = default_dt(reference.grid, nkg_spec)
            reports = run_ensemble(reference, nkg_spec, 20.0, dt, count=2, amplitude=0.01,
                                   seed=3, sample_every=20)
            assert not any(r.diverged for r in reports)
            worst.append(max(r.max_orbital_distance for r in reports))
        assert max(worst) <= 5e-2
        assert 0.5 <= worst[0] / worst[1] <= 2.0


class TestVortexLift:
    """Test lifting u(r, x3) exp(i l theta) to a Cartesian grid."""

    @pytest.fixture
    def box(self):
        return build_grid({'dims': [[-3.0, 3.0, 24]] * 3})

    def test_lifted_field_winds_once(self, cylinder, box):
        u = cylinder.sample(lambda r, x3: r * np.exp(-r ** 2 - x3 ** 2))
        lifted = lift_vortex(u, 1, 0.3, box)
        assert lifted.omega == 0.3
        assert lifted.axis_defect < 0.05
        assert winding_number(lifted.psi, 1.0) == pytest.approx(1.0, abs=1e-9)

    def test_angular_momentum_is_minus_l_times_charge(self, cylinder):
        u = cylinder.sample(lambda r, x3: r * np.exp(-r ** 2 - x3 ** 2))
        expected = -2.0 * np.sum(cylinder.weights * u.values ** 2)
        assert angular_momentum_m3(u, 2) == pytest.approx(expected, rel=1e-12)

    def test_profile_must_vanish_on_axis(self, cylinder, box):
        u = cylinder.sample(lambda r, x3: np.exp(-r ** 2 - x3 ** 2))
        assert axis_defect(u) > 0.9
        with pytest.raises(DomainError, match="axis"):
            lift_vortex(u, 1, 0.3, box)

    def test_zero_winding_keeps_axis_value(self, cylinder, box):
        u = cylinder.sample(lambda r, x3: np.exp(-r ** 2 - x3 ** 2))
        lifted = lift_vortex(u, 0, 0.3, box)
        assert np.max(np.abs(lifted.psi.values)) > 0.9

    def test_negative_profile_rejected(self, cylinder, box):
        u = cylinder.sample(lambda r, x3: -r * np.exp(-r ** 2 - x3 ** 2))
        with pytest.raises(DomainError, match="non-negative"):
            lift_vortex(u, 1, 0.3, box)

    def test_target_must_be_three_dimensional(self, cylinder):
        u = cylinder.sample(lambda r, x3: r * np.exp(-r ** 2 - x3 ** 2))
        with pytest.raises(UsageError):
            lift_vortex(u, 1, 0.3, build_grid({'dims': [[-3.0, 3.0, 8]] * 2}))


class TestVortexSolve:
    """Test a reduced vortex solve followed by the lift."""

    @pytest.mark.slow
    def test_solve_lift_and_wind(self):
        grid = build_grid({
            'kind': 'cylindrical',
            'dims': [[0.0, 12.0, 48], [-6.0, 6.0, 96]],
            'boundary': ['dirichlet-zero', 'periodic'],
        })
        spec = ModelSpec(
            NSE_VORTEX,
            Nonlinearity(NSE_POWER, 3, 3.0),
            potential=Potential(family=AXIAL_PERIODIC, base=1.0, amplitude=0.2),
            winding=1,
            a=1.0,
            s=3.0,
        )
        init = torus_test_function(4.0, 1.0, grid)
        opts = MinimizeOptions(max_iters=20000, tolerance=1e-8)
        report = minimize_constrained(spec, charge(init, spec), init, opts)
        assert report.el_residual <= 1e-4

        u = report.minimizer
        assert angular_momentum_m3(u, 1) == pytest.approx(-report.c_delta, rel=1e-10)

        box = build_grid({'dims': [[-13.0, 13.0, 52], [-13.0, 13.0, 52], [-6.0, 6.0, 48]]})
        lifted = lift_vortex(u, 1, report.omega, box)
        peak_row = int(np.argmax(np.max(np.abs(u.values), axis=1)))
        radius = float(np.clip(grid.coords[0][peak_row], 1.0, 12.0))
        assert winding_number(lifted.psi, radius) == pytest.approx(1.0, abs=1e-6)
