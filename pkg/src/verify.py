"""
Verify Module

Property checks run by the `verify` workflow: gradient consistency,
homogeneity, splitting, coercivity sampling, the NKG small-amplitude
bound, potential periodicity and short-time conservation.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from .evolve import default_dt, evolve_and_monitor, GammaParams, reversibility_defect
from .functionals import (
    charge,
    charge_floor,
    coercivity_offset,
    energy,
    evaluate_all,
    gradient_check,
    nkg_small_amplitude_bound,
    potential_values,
    rayleigh_quotient_min,
    sharp_seminorm,
    splitting_defect,
)
from .grid import CYLINDRICAL, Field, Grid, NKGState, random_smooth_field
from .model import LATTICE, ModelSpec, coercivity_constants

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-6
SPLITTING_TOLERANCE = 1e-12
COERCIVITY_TOLERANCE = 1e-9
SMALL_AMPLITUDES = (0.05, 0.1, 0.2)
CONSERVATION_DT = 5e-4
CHARGE_DRIFT_TOLERANCE = 1e-10
ENERGY_DRIFT_PER_10 = 1e-6
REVERSIBILITY_STEPS = 1000
REVERSIBILITY_TOLERANCE = 1e-10


@dataclass
class CheckResult:
    """One verified property."""
    name: str
    value: float
    bound: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'value': self.value,
            'bound': self.bound,
            'passed': self.passed,
            'detail': self.detail,
        }


class PropertySuite:
    """Runs the property checks that apply to one model on one grid."""

    def __init__(
        self,
        spec: ModelSpec,
        grid: Grid,
        samples: int = 1000,
        evolve_steps: int = 200,
        dt: Optional[float] = None,
        seed: int = 0,
        show_progress: bool = False
    ):
        self.spec = spec
        self.grid = grid
        self.samples = samples
        self.evolve_steps = evolve_steps
        self.dt = dt
        self.rng = np.random.default_rng(seed)
        self.show_progress = show_progress
        self.results: List[CheckResult] = []

    @property
    def passed_count(self) -> int:
        return sum(1 for r in self.results if r.passed)

    @property
    def failed_count(self) -> int:
        return sum(1 for r in self.results if not r.passed)

    def _record(self, name: str, value: float, bound: float, passed: bool, detail: str = ""):
        result = CheckResult(name=name, value=float(value), bound=float(bound), passed=bool(passed), detail=detail)
        self.results.append(result)
        status = "PASS" if result.passed else "FAIL"
        logger.info(f"  [{status}] {name}: {value:.3e} (bound {bound:.1e}) {detail}")

    def _random_state(self, amplitude: float = 1.0):
        if self.spec.is_nkg:
            psi = random_smooth_field(self.grid, self.rng, amplitude=amplitude, complex_values=True)
            psi_hat = random_smooth_field(self.grid, self.rng, amplitude=amplitude, complex_values=True)
            return NKGState(psi, psi_hat)
        return random_smooth_field(self.grid, self.rng, amplitude=amplitude)

    def run(self) -> List[CheckResult]:
        checks: List[Callable[[], None]] = [
            self.check_gradients,
            self.check_nonlinearity_derivative,
            self.check_splitting,
            self.check_conservation,
        ]
        if self.spec.is_nkg:
            checks.append(self.check_small_amplitude_bound)
        else:
            checks.extend([
                self.check_charge_homogeneity,
                self.check_coercivity_constants,
                self.check_coercivity_sampling,
                self.check_rayleigh_bound,
            ])
            if self.spec.effective_potential.family == LATTICE:
                checks.append(self.check_potential_periodicity)

        for check in checks:
            check()
        logger.info(f"Checks passed: {self.passed_count}, failed: {self.failed_count}")
        return self.results

    def check_gradients(self):
        worst = {}
        for _ in range(3):
            state = self._random_state()
            direction = self._random_state()
            for which in ("E", "C", "Phi", "Lambda", "J"):
                mismatch = gradient_check(state, self.spec, which, direction)
                worst[which] = max(worst.get(which, 0.0), mismatch)
        for which, mismatch in worst.items():
            self._record(f"gradient_{which}", mismatch, GRADIENT_TOLERANCE, mismatch <= GRADIENT_TOLERANCE)

    def check_nonlinearity_derivative(self):
        nl = self.spec.nonlinearity
        s = np.linspace(0.05, 3.0, 200)
        h = 1e-6
        numeric = (nl.value(s + h) - nl.value(s - h)) / (2.0 * h)
        analytic = nl.derivative(s)
        mismatch = float(np.max(np.abs(numeric - analytic) / np.maximum(np.abs(analytic), 1.0)))
        self._record("nonlinearity_derivative", mismatch, GRADIENT_TOLERANCE, mismatch <= GRADIENT_TOLERANCE)

    def check_charge_homogeneity(self):
        state = self._random_state()
        base = charge(state, self.spec)
        worst = 0.0
        for t in (0.5, 2.0, 3.0):
            worst = max(worst, abs(charge(state * t, self.spec) - t ** 2 * base) / abs(t ** 2 * base))
        self._record("charge_homogeneity", worst, SPLITTING_TOLERANCE, worst <= SPLITTING_TOLERANCE)

    def _split_axis(self) -> int:
        return 1 if self.grid.kind == CYLINDRICAL else 0

    def _bump(self, center: float, width: float, compact: bool):
        axis = self._split_axis()
        mesh = self.grid.mesh()
        profile = np.ones(self.grid.shape)
        for other, (dim, x) in enumerate(zip(self.grid.spec.dims, mesh)):
            if other == axis:
                continue
            mid = 0.5 * (dim.lower + dim.upper)
            if self.grid.kind == CYLINDRICAL and other == 0:
                mid = 0.5 * dim.upper
            profile = profile * np.exp(-0.5 * ((x - mid) / (0.15 * (dim.upper - dim.lower))) ** 2)
        x = mesh[axis]
        if compact:
            profile = profile * np.clip(1.0 - np.abs(x - center) / width, 0.0, None) ** 2
        else:
            profile = profile * np.exp(-0.5 * ((x - center) / width) ** 2)
        field = Field(self.grid, profile)
        if self.spec.is_nkg:
            return NKGState(field, field * (-0.5j))
        return field

    def check_splitting(self):
        axis = self._split_axis()
        dim = self.grid.spec.dims[axis]
        length = dim.upper - dim.lower
        left = dim.lower + 0.25 * length
        right = dim.lower + 0.75 * length
        width = 0.1 * length
        for which in ("E", "C"):
            u = self._bump(left, width, compact=True)
            w = self._bump(right, width, compact=True)
            scale = abs(energy(u, self.spec) if which == "E" else charge(u, self.spec)) + 1e-300
            defect = splitting_defect(self.spec, which, u, w) / scale
            self._record(f"splitting_disjoint_{which}", defect, SPLITTING_TOLERANCE, defect <= SPLITTING_TOLERANCE)

        defects = []
        center = dim.lower + 0.5 * length
        for separation in (0.1, 0.2, 0.3):
            u = self._bump(center - 0.5 * separation * length, 0.03 * length, compact=False)
            w = self._bump(center + 0.5 * separation * length, 0.03 * length, compact=False)
            defects.append(splitting_defect(self.spec, "E", u, w))
        decreasing = all(b <= a for a, b in zip(defects, defects[1:]))
        self._record(
            "splitting_decreasing", defects[-1], defects[0], decreasing,
            detail=f"defects {', '.join(f'{d:.2e}' for d in defects)}",
        )

    def check_coercivity_constants(self):
        nl = self.spec.nonlinearity
        n = self.grid.dimension
        constants = coercivity_constants(n, nl.exponent, nl.lower_coefficient, 1.0)
        ok = constants.s > 1.0 and constants.q < 2.0
        self._record("coercivity_exponents", constants.s, 1.0, ok, detail=f"q={constants.q:g}")

    def check_coercivity_sampling(self):
        worst = np.inf
        worst_bound = np.inf
        offset = coercivity_offset(self.spec.a, self.spec.s, self.spec.delta)
        floor = charge_floor(self.grid)
        iterator = tqdm(range(self.samples), desc="Coercivity", unit="field", disable=not self.show_progress)
        for _ in iterator:
            amplitude = 10.0 ** self.rng.uniform(-2.0, 1.0)
            state = self._random_state(amplitude)
            values = evaluate_all(state, self.spec)
            margin = values.energy + self.spec.a * abs(values.charge) ** self.spec.s
            worst = min(worst, margin)
            if abs(values.charge) >= floor:
                j_margin = values.j_delta - (0.5 * self.spec.delta * values.phi - offset)
                worst_bound = min(worst_bound, j_margin)
        self._record("coercivity_sampling", worst, -COERCIVITY_TOLERANCE, worst >= -COERCIVITY_TOLERANCE,
                     detail=f"{self.samples} samples")
        self._record("penalised_lower_bound", worst_bound, -COERCIVITY_TOLERANCE,
                     worst_bound >= -COERCIVITY_TOLERANCE)

    def check_rayleigh_bound(self):
        proxy = rayleigh_quotient_min(self.spec, self.grid)
        floor = float(np.min(potential_values(self.grid, self.spec)))
        gap = proxy - floor
        self._record("rayleigh_above_potential_floor", gap, -1e-12, gap >= -1e-12,
                     detail=f"proxy={proxy:.10g}")

    def check_small_amplitude_bound(self):
        worst = np.inf
        for eps in SMALL_AMPLITUDES:
            bound = nkg_small_amplitude_bound(self.spec, eps)
            for _ in range(max(1, self.samples // 10)):
                state = self._random_state()
                psi = state.psi * (eps / sharp_seminorm(state, self.spec))
                hat = state.psi_hat * (10.0 ** self.rng.uniform(-1.0, 1.0) * eps / state.psi_hat.max_abs())
                candidate = NKGState(psi, hat)
                values = evaluate_all(candidate, self.spec)
                if values.lam is None:
                    continue
                worst = min(worst, values.lam - bound)
        self._record("nkg_small_amplitude_bound", worst, -COERCIVITY_TOLERANCE, worst >= -COERCIVITY_TOLERANCE)

    def check_potential_periodicity(self):
        potential = self.spec.effective_potential
        n = self.grid.ndim
        matrix = np.asarray(potential.period_matrix) if potential.period_matrix else np.eye(n)
        points = [self.rng.uniform(-5.0, 5.0, 64) for _ in range(n)]
        base = potential.evaluate(*points)
        worst = 0.0
        for column in range(n):
            moved = [p + matrix[i, column] for i, p in enumerate(points)]
            worst = max(worst, float(np.max(np.abs(potential.evaluate(*moved) - base))))
        self._record("potential_periodicity", worst, 1e-12, worst <= 1e-12)

    def check_conservation(self):
        dt = self.dt or min(CONSERVATION_DT, default_dt(self.grid, self.spec))
        state = self._random_state(0.5)
        if not self.spec.is_nkg:
            state = state.to_complex()
        gamma = GammaParams.from_reference(state, self.spec)
        report = evolve_and_monitor(
            state, self.evolve_steps * dt, dt, self.spec, gamma,
            sample_every=max(1, self.evolve_steps // 10),
        )
        energy_bound = ENERGY_DRIFT_PER_10 * max(1.0, report.times[-1] / 10.0)
        self._record("charge_conservation", report.max_charge_drift, CHARGE_DRIFT_TOLERANCE,
                     report.max_charge_drift <= CHARGE_DRIFT_TOLERANCE and not report.diverged)
        self._record("energy_conservation", report.max_energy_drift, energy_bound,
                     report.max_energy_drift <= energy_bound and not report.diverged,
                     detail=f"dt={dt:g}, T={report.times[-1]:g}")
        if self.spec.is_nkg:
            defect = reversibility_defect(state, REVERSIBILITY_STEPS, dt, self.spec)
            self._record("time_reversibility", defect, REVERSIBILITY_TOLERANCE,
                         defect <= REVERSIBILITY_TOLERANCE,
                         detail=f"{REVERSIBILITY_STEPS} steps")


def run_property_suite(spec: ModelSpec, grid: Grid, **kwargs) -> List[CheckResult]:
    """
    Convenience function to run every applicable check.

    Returns:
        List of CheckResult
    """
    return PropertySuite(spec, grid, **kwargs).run()
