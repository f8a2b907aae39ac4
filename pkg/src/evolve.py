"""
Evolve Module

Time integrators for the Schroedinger and Klein-Gordon dynamics, the
orbital-stability monitor, standing-wave and reversibility checks,
perturbation ensembles and the lifting of cylindrical vortex profiles to
three dimensions.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import sparse
from scipy import fft as sp_fft
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu
from tqdm import tqdm

from .errors import ConfigurationError, DomainError, UsageError
from .functionals import charge, energy, potential_values
from .grid import (
    CARTESIAN,
    CYLINDRICAL,
    Field,
    Grid,
    NKGState,
    State,
    aligned_distance,
    integrate,
    laplacian,
    norm,
    random_smooth_field,
)
from .model import ModelSpec

logger = logging.getLogger(__name__)

NSE_DT_MAX = 0.1
NKG_CFL = 0.9
DEFAULT_SAMPLE_EVERY = 10


def _effective_spacing(grid: Grid) -> float:
    return float(1.0 / np.sqrt(sum(1.0 / h ** 2 for h in grid.spacings)))


def dt_max(grid: Grid, spec: ModelSpec) -> float:
    """
    Largest admissible |dt|: the leapfrog stability bound for NKG, a fixed
    accuracy cap for the unconditionally stable NSE splitting.
    """
    if spec.is_nkg:
        h = _effective_spacing(grid)
        mass = spec.nonlinearity.mass
        return NKG_CFL * h / np.sqrt(1.0 + (mass * h) ** 2)
    return NSE_DT_MAX


def default_dt(grid: Grid, spec: ModelSpec) -> float:
    if spec.is_nkg:
        return 0.5 * dt_max(grid, spec)
    return min(0.5 * min(grid.spacings) ** 2, 1e-2)


def check_dt(dt: float, grid: Grid, spec: ModelSpec):
    """
    Raises:
        ConfigurationError: For dt = 0 or |dt| above dt_max
    """
    limit = dt_max(grid, spec)
    if dt == 0.0 or not np.isfinite(dt):
        raise ConfigurationError(f"Time step must be finite and non-zero, got {dt}")
    if abs(dt) > limit:
        raise ConfigurationError(f"|dt| = {abs(dt):g} exceeds the limit {limit:g} for this grid")


class NSEStepper:
    """
    Strang splitting for i psi_t = -Delta psi / 2 + (V + l^2 / 2r^2) psi + W'(psi) / 2.

    The pointwise phase flow is exact. The linear flow is exact in Fourier
    space on all-periodic grids (using the finite-difference symbol) and
    Crank-Nicolson with a cached sparse LU factorization otherwise.
    """

    def __init__(self, grid: Grid, spec: ModelSpec, dt: float):
        if spec.is_nkg:
            raise UsageError("NSEStepper needs an NSE model")
        check_dt(dt, grid, spec)
        self.grid = grid
        self.spec = spec
        self.dt = dt
        self.potential = potential_values(grid, spec)
        self._lu = None
        self._rhs = None
        self._propagator = None
        if grid.all_periodic:
            self._propagator = np.exp(0.5j * dt * grid.laplacian_symbol)
        else:
            lap = grid.laplacian_matrix.astype(np.complex128)
            identity = sparse.identity(grid.size, dtype=np.complex128)
            self._lu = splu((identity - 0.25j * dt * lap).tocsc())
            self._rhs = (identity + 0.25j * dt * lap).tocsr()
        logger.debug(
            f"NSE stepper dt={dt:g} linear step: "
            f"{'Fourier' if self._propagator is not None else 'Crank-Nicolson'}"
        )

    def _phase(self, values: np.ndarray) -> np.ndarray:
        rate = self.potential + 0.5 * self.spec.nonlinearity.derivative_over_s(np.abs(values))
        return values * np.exp(-0.5j * self.dt * rate)

    def _linear(self, values: np.ndarray) -> np.ndarray:
        if self._propagator is not None:
            return sp_fft.ifftn(self._propagator * sp_fft.fftn(values))
        flat = self._lu.solve(self._rhs @ values.ravel())
        return flat.reshape(self.grid.shape)

    def step(self, psi: Field) -> Field:
        values = psi.values.astype(np.complex128)
        values = self._phase(values)
        values = self._linear(values)
        values = self._phase(values)
        return Field(psi.grid, values)


@lru_cache(maxsize=8)
def _stepper(grid: Grid, spec: ModelSpec, dt: float) -> NSEStepper:
    return NSEStepper(grid, spec, dt)


def step_nse(psi: Field, dt: float, spec: ModelSpec) -> Field:
    """One Strang step of the Schroedinger flow (steppers are cached per grid/spec/dt)."""
    if not isinstance(psi, Field):
        raise UsageError("step_nse needs a Field")
    return _stepper(psi.grid, spec, float(dt)).step(psi)


def _nkg_force(psi: Field, spec: ModelSpec) -> Field:
    return Field(
        psi.grid,
        laplacian(psi).values - spec.nonlinearity.complex_derivative(psi.values),
    )


def step_nkg(state: NKGState, dt: float, spec: ModelSpec) -> NKGState:
    """
    One velocity-Verlet (kick-drift-kick) step of psi_tt - Delta psi + W'(psi) = 0.

    Symmetric in dt, so stepping with -dt retraces the trajectory.
    """
    if not isinstance(state, NKGState):
        raise UsageError("step_nkg needs an NKGState")
    check_dt(dt, state.grid, spec)
    half = state.psi_hat + _nkg_force(state.psi, spec) * (0.5 * dt)
    psi = state.psi + half * dt
    psi_hat = half + _nkg_force(psi, spec) * (0.5 * dt)
    return NKGState(psi, psi_hat)


def step(state: State, dt: float, spec: ModelSpec) -> State:
    if spec.is_nkg:
        return step_nkg(state, dt, spec)
    return step_nse(state, dt, spec)


@dataclass
class GammaParams:
    """Reference energy, charge and state of the orbit being monitored."""
    e0: float
    c0: float
    reference: State
    metric: str = "l2"

    @classmethod
    def from_reference(cls, reference: State, spec: ModelSpec) -> 'GammaParams':
        return cls(
            e0=energy(reference, spec),
            c0=charge(reference, spec),
            reference=reference,
            metric="energy" if spec.is_nkg else "l2",
        )


def lyapunov(e: float, c: float, gamma: GammaParams) -> float:
    """V = (E - e0)^2 + (C - c0)^2 with signed charges."""
    return (e - gamma.e0) ** 2 + (c - gamma.c0) ** 2


def orbital_distance(state: State, gamma: GammaParams) -> float:
    """Relative distance to the reference orbit (shifts and global phase)."""
    reference = gamma.reference
    if isinstance(reference, Field) and not isinstance(state, Field):
        raise UsageError("State and reference types differ")
    return aligned_distance(state, reference, gamma.metric)


@dataclass
class EvolutionReport:
    """Sampled time series of one trajectory."""
    times: List[float] = field(default_factory=list)
    energy_series: List[float] = field(default_factory=list)
    charge_series: List[float] = field(default_factory=list)
    lyapunov_series: List[float] = field(default_factory=list)
    orbital_distance_series: List[float] = field(default_factory=list)
    diverged: bool = False
    final_state: Optional[State] = None
    metric: str = "l2"

    @property
    def max_energy_drift(self) -> float:
        if not self.energy_series:
            return 0.0
        e0 = self.energy_series[0]
        return float(max(abs(e - e0) for e in self.energy_series) / max(abs(e0), 1e-300))

    @property
    def max_charge_drift(self) -> float:
        if not self.charge_series:
            return 0.0
        c0 = self.charge_series[0]
        return float(max(abs(c - c0) for c in self.charge_series) / max(abs(c0), 1e-300))

    @property
    def max_orbital_distance(self) -> float:
        return float(max(self.orbital_distance_series)) if self.orbital_distance_series else 0.0

    def to_dict(self) -> Dict:
        return {
            'samples': len(self.times),
            'final_time': self.times[-1] if self.times else 0.0,
            'diverged': self.diverged,
            'metric': self.metric,
            'max_energy_drift': self.max_energy_drift,
            'max_charge_drift': self.max_charge_drift,
            'max_orbital_distance': self.max_orbital_distance,
            'max_lyapunov': max(self.lyapunov_series) if self.lyapunov_series else 0.0,
        }

    def rows(self) -> List[Dict]:
        return [
            {'t': t, 'E': e, 'C': c, 'V': v, 'distance': d}
            for t, e, c, v, d in zip(
                self.times, self.energy_series, self.charge_series,
                self.lyapunov_series, self.orbital_distance_series,
            )
        ]


def evolve_and_monitor(
    init: State,
    T: float,
    dt: float,
    spec: ModelSpec,
    gamma: GammaParams,
    sample_every: int = DEFAULT_SAMPLE_EVERY,
    show_progress: bool = False,
    on_sample: Optional[Callable[[int, float, State], None]] = None
) -> EvolutionReport:
    """
    Integrate to time T, sampling E, C, the Lyapunov function and the
    orbital distance every `sample_every` steps (and at t = 0).

    A non-finite state ends the run with diverged = True and the samples
    gathered so far.
    """
    if T < 0.0:
        raise ConfigurationError(f"Final time must be >= 0, got {T}")
    if sample_every < 1:
        raise ConfigurationError(f"sample_every must be >= 1, got {sample_every}")
    check_dt(dt, init.grid, spec)
    steps = int(round(T / abs(dt)))
    if spec.is_nkg:
        state = init
    else:
        state = init.to_complex()

    report = EvolutionReport(metric=gamma.metric)

    def sample(k: int, current: State) -> bool:
        if not current.is_finite():
            report.diverged = True
            logger.error(f"Non-finite state at t = {k * abs(dt):g}; stopping")
            return False
        e = energy(current, spec)
        c = charge(current, spec)
        report.times.append(k * abs(dt))
        report.energy_series.append(e)
        report.charge_series.append(c)
        report.lyapunov_series.append(lyapunov(e, c, gamma))
        report.orbital_distance_series.append(orbital_distance(current, gamma))
        if on_sample is not None:
            on_sample(k, k * abs(dt), current)
        return True

    sample(0, state)
    for k in tqdm(range(1, steps + 1), desc="Evolve", unit="step", disable=not show_progress):
        state = step(state, dt, spec)
        if k % sample_every == 0 or k == steps:
            if not sample(k, state):
                break
        elif not np.isfinite(state.max_abs()):
            report.diverged = True
            logger.error(f"Non-finite state at t = {k * abs(dt):g}; stopping")
            break

    report.final_state = state
    logger.info(
        f"Evolved to t = {report.times[-1] if report.times else 0.0:g}: "
        f"energy drift {report.max_energy_drift:.3e}, charge drift {report.max_charge_drift:.3e}, "
        f"max distance {report.max_orbital_distance:.3e}"
    )
    return report


def _rotate(state: State, phase: complex) -> State:
    return state * phase


def standing_wave_check(
    psi0: State,
    omega: float,
    T: float,
    dt: float,
    spec: ModelSpec,
    sample_every: int = DEFAULT_SAMPLE_EVERY
) -> float:
    """
    max_t |psi(t) - exp(-i omega t) psi0| / |psi0| over the sampled times.
    """
    check_dt(dt, psi0.grid, spec)
    state = psi0 if spec.is_nkg else psi0.to_complex()
    start = state
    scale = norm(start)
    if scale == 0.0:
        raise DomainError("Standing-wave check needs a non-zero state")
    steps = int(round(T / abs(dt)))
    worst = 0.0
    for k in range(1, steps + 1):
        state = step(state, dt, spec)
        if k % sample_every == 0 or k == steps:
            t = k * dt
            deviation = norm(state - _rotate(start, np.exp(-1j * omega * t))) / scale
            worst = max(worst, deviation)
    return float(worst)


def reversibility_defect(state: State, steps: int, dt: float, spec: ModelSpec) -> float:
    """Relative distance after `steps` steps forward and the same number back."""
    start = state if spec.is_nkg else state.to_complex()
    current = start
    for _ in range(steps):
        current = step(current, dt, spec)
    for _ in range(steps):
        current = step(current, -dt, spec)
    return float(norm(current - start) / max(norm(start), 1e-300))


def _noise_like(component: Field, amplitude: float, rng: np.random.Generator,
                complex_values: bool) -> Field:
    noise = random_smooth_field(component.grid, rng, complex_values=complex_values)
    return noise * (amplitude * norm(component) / norm(noise))


def perturb(
    state: State,
    amplitude: float,
    rng: np.random.Generator,
    complex_values: bool = True
) -> State:
    """
    Add smooth noise whose L2 norm is amplitude times the norm of each
    component it is added to.
    """
    if isinstance(state, NKGState):
        return NKGState(
            state.psi + _noise_like(state.psi, amplitude, rng, complex_values),
            state.psi_hat + _noise_like(state.psi_hat, amplitude, rng, complex_values),
        )
    base = state.to_complex() if complex_values else state
    return base + _noise_like(state, amplitude, rng, complex_values)


def run_ensemble(
    reference: State,
    spec: ModelSpec,
    T: float,
    dt: float,
    count: int,
    amplitude: float,
    seed: int = 0,
    sample_every: int = DEFAULT_SAMPLE_EVERY,
    scale: float = 1.0,
    show_progress: bool = False
) -> List[EvolutionReport]:
    """
    Evolve `count` independently perturbed copies of the reference (scaled
    by `scale` before the noise is added) and monitor each against the
    reference orbit.
    """
    if count < 1:
        raise ConfigurationError(f"Ensemble size must be >= 1, got {count}")
    gamma = GammaParams.from_reference(reference, spec)
    rng = np.random.default_rng(seed)
    reports = []
    for member in tqdm(range(count), desc="Ensemble", unit="run", disable=not show_progress):
        init = perturb(reference * scale, amplitude, rng)
        report = evolve_and_monitor(init, T, dt, spec, gamma, sample_every)
        logger.info(f"Ensemble member {member}: max distance {report.max_orbital_distance:.3e}")
        reports.append(report)
    return reports


def angular_momentum_m3(u: Field, ell: int) -> float:
    """Axial angular momentum of u(r, x3) exp(i l theta): -l times the charge."""
    if u.grid.kind != CYLINDRICAL:
        raise UsageError("angular_momentum_m3 needs a cylindrical profile")
    return -ell * integrate(u, lambda v: np.abs(v) ** 2)


@dataclass
class LiftedVortex:
    psi: Field
    m3: float
    omega: float
    axis_defect: float


def axis_defect(u: Field) -> float:
    """Linear extrapolation of the profile to r = 0, relative to max|u|."""
    values = np.abs(u.values)
    peak = float(np.max(values))
    if peak == 0.0:
        return 0.0
    extrapolated = 1.5 * values[0, :] - 0.5 * values[1, :]
    return float(np.max(np.abs(extrapolated)) / peak)


def lift_vortex(
    u: Field,
    ell: int,
    omega: float,
    target_grid: Grid,
    axis_tolerance: float = 0.25
) -> LiftedVortex:
    """
    Build psi(x) = u(r, x3) exp(i l theta) on a 3D Cartesian grid.

    Args:
        u: Non-negative profile on a cylindrical grid
        ell: Winding number
        omega: Frequency carried along for the evolution
        target_grid: 3D Cartesian grid (axes x1, x2, x3)
        axis_tolerance: Largest admissible |u| extrapolated to the axis,
            relative to max|u|, when l != 0

    Raises:
        DomainError: For a profile that is negative or does not vanish on the axis
    """
    grid = u.grid
    if grid.kind != CYLINDRICAL:
        raise UsageError("lift_vortex needs a cylindrical profile")
    if target_grid.kind != CARTESIAN or target_grid.ndim != 3:
        raise UsageError("lift_vortex targets a 3D Cartesian grid")
    values = np.real(u.values)
    peak = float(np.max(np.abs(values)))
    if np.min(values) < -1e-6 * peak:
        raise DomainError("Vortex profile must be non-negative")
    defect = axis_defect(u)
    if ell != 0 and defect > axis_tolerance:
        raise DomainError(
            f"Profile does not vanish on the axis (extrapolated value {defect:.3g} of the peak)"
        )

    r = np.concatenate(([0.0], grid.coords[0]))
    axis_row = np.zeros((1, grid.shape[1])) if ell != 0 else values[:1, :]
    table = np.concatenate((axis_row, values), axis=0)
    interpolator = RegularGridInterpolator(
        (r, grid.coords[1]), table, bounds_error=False, fill_value=0.0
    )

    x1, x2, x3 = target_grid.mesh()
    rho = np.sqrt(x1 ** 2 + x2 ** 2)
    points = np.stack((rho.ravel(), x3.ravel()), axis=-1)
    amplitude = interpolator(points).reshape(target_grid.shape)
    theta = np.arctan2(x2, x1)
    psi = Field(target_grid, amplitude * np.exp(1j * ell * theta))
    m3 = angular_momentum_m3(u, ell)
    logger.info(f"Lifted vortex l={ell} onto {target_grid.shape}: M3 = {m3:.6g}")
    return LiftedVortex(psi=psi, m3=m3, omega=omega, axis_defect=defect)


def winding_number(
    psi: Field,
    radius: float,
    x3: Optional[float] = None,
    samples: int = 256
) -> float:
    """
    Phase winding of psi around the x3-axis along a circle of the given
    radius in the plane x3 (default: mid-height), in units of 2 pi.
    """
    grid = psi.grid
    if grid.kind != CARTESIAN or grid.ndim != 3:
        raise UsageError("winding_number needs a field on a 3D Cartesian grid")
    if x3 is None:
        x3 = grid.center()[2]
    angles = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    points = np.stack(
        (radius * np.cos(angles), radius * np.sin(angles), np.full(samples, x3)), axis=-1
    )
    real = RegularGridInterpolator(grid.coords, np.real(psi.values))(points)
    imag = RegularGridInterpolator(grid.coords, np.imag(psi.values))(points)
    values = real + 1j * imag
    if np.min(np.abs(values)) == 0.0:
        raise DomainError("psi vanishes on the sampling circle; the phase is undefined")
    phase = np.unwrap(np.angle(np.append(values, values[0])))
    return float((phase[-1] - phase[0]) / (2.0 * np.pi))
