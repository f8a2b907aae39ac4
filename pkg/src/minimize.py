"""
Minimize Module

Gradient descent for the penalised functional J_delta (free problem) and
for the energy on a charge level set (constrained problem), Lagrange
multiplier extraction, recentering and delta continuation.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .errors import ConfigurationError, DomainError, NumericalError
from .functionals import (
    charge,
    charge_floor,
    coercivity_offset,
    energy_gradient,
    charge_gradient,
    evaluate_all,
    objective,
)
from .grid import Field, NKGState, State, inner, norm
from .model import CONSTANT, ModelSpec

logger = logging.getLogger(__name__)

STEP_RULES = ("barzilai-borwein-armijo", "fixed")
ROUNDOFF_FACTOR = 64.0
LINE_SEARCH_STALLED = "line search stalled"


@dataclass
class MinimizeOptions:
    """
    Descent settings.

    Attributes:
        max_iters: Iteration cap
        tolerance: Stop when |grad| <= tolerance * min(1, |grad at start|)
        residual_tolerance: Largest Euler-Lagrange residual counted as converged
        step_rule: "barzilai-borwein-armijo" or "fixed"
        initial_step: First trial step (every step for "fixed")
        rng_seed: Seed for randomized initializers
        continuation_deltas: Optional descending delta schedule
        max_relative_change: Cap on max|step * grad| / max|state|
        armijo_c: Sufficient-decrease constant
        min_step: Backtracking gives up below this step
        show_progress: Show a tqdm bar
    """
    max_iters: int = 5000
    tolerance: float = 1e-8
    residual_tolerance: float = 1e-4
    step_rule: str = "barzilai-borwein-armijo"
    initial_step: float = 1e-2
    rng_seed: int = 0
    continuation_deltas: Optional[List[float]] = None
    max_relative_change: float = 0.25
    armijo_c: float = 1e-4
    min_step: float = 1e-20
    show_progress: bool = False

    def validate(self):
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tolerance > 0.0:
            raise ConfigurationError(f"tolerance must be positive, got {self.tolerance}")
        if not self.residual_tolerance > 0.0:
            raise ConfigurationError(
                f"residual_tolerance must be positive, got {self.residual_tolerance}"
            )
        if self.step_rule not in STEP_RULES:
            raise ConfigurationError(
                f"Unknown step rule '{self.step_rule}' (expected one of {STEP_RULES})"
            )
        if not self.initial_step > 0.0:
            raise ConfigurationError(f"initial_step must be positive, got {self.initial_step}")
        if not 0.0 < self.max_relative_change:
            raise ConfigurationError("max_relative_change must be positive")
        if self.continuation_deltas is not None:
            deltas = list(self.continuation_deltas)
            if not deltas or any(d <= 0.0 for d in deltas):
                raise ConfigurationError("continuation_deltas must be a non-empty list of positive values")
            if any(b >= a for a, b in zip(deltas, deltas[1:])):
                raise ConfigurationError("continuation_deltas must be strictly decreasing")


@dataclass
class DescentResult:
    state: State
    value: float
    gradient_norm: float
    trace: List[Tuple[int, float, float]]
    converged: bool
    iterations: int
    message: str


@dataclass
class MinimizeReport:
    """Result of one minimization run."""
    minimizer: State
    e_delta: float
    c_delta: float
    omega: float
    lambda_value: Optional[float]
    el_residual: float
    trace: List[Tuple[int, float, float]]
    converged: bool
    iterations: int
    message: str
    delta: float
    j_delta: Optional[float] = None
    ella_residual: Optional[float] = None
    init_below_threshold: Optional[bool] = None
    nonnegative: Optional[bool] = None
    coercivity_bound_held: Optional[bool] = None
    mode: str = "free"

    def to_dict(self) -> Dict:
        return {
            'mode': self.mode,
            'E': self.e_delta,
            'C': self.c_delta,
            'omega': self.omega,
            'Lambda': self.lambda_value,
            'J_delta': self.j_delta,
            'delta': self.delta,
            'el_residual': self.el_residual,
            'ella_residual': self.ella_residual,
            'converged': self.converged,
            'iterations': self.iterations,
            'message': self.message,
            'init_below_threshold': self.init_below_threshold,
            'nonnegative': self.nonnegative,
            'coercivity_bound_held': self.coercivity_bound_held,
        }

    def trace_rows(self) -> List[Dict]:
        return [{'iteration': k, 'objective': f, 'gradient_norm': g} for k, f, g in self.trace]


def _max_abs(state: State) -> float:
    return state.max_abs()


def _descend(
    evaluate: Callable[[State], Tuple[float, State]],
    x0: State,
    opts: MinimizeOptions,
    project: Optional[Callable[[State], Optional[State]]] = None,
    on_accept: Optional[Callable[[State], None]] = None,
    desc: str = "Descent"
) -> DescentResult:
    """
    Barzilai-Borwein steps safeguarded by Armijo backtracking.

    A trial is accepted on sufficient decrease, or when the change in value
    is at roundoff level and the gradient norm still decreases. project may
    return None to reject a trial outright.
    """
    x = x0
    f, g = evaluate(x)
    gg = inner(g, g)
    g_norm = np.sqrt(gg)
    g0 = g_norm
    threshold = opts.tolerance * min(1.0, g0)
    trace = [(0, float(f), float(g_norm))]
    alpha = opts.initial_step
    eps = np.finfo(np.float64).eps
    message = "max iterations reached"
    converged = False
    iteration = 0

    if g0 == 0.0:
        return DescentResult(x, f, 0.0, trace, True, 0, "zero gradient at start")

    progress = tqdm(total=opts.max_iters, desc=desc, unit="it", disable=not opts.show_progress)
    try:
        for iteration in range(1, opts.max_iters + 1):
            if g_norm <= threshold:
                converged = True
                message = "gradient tolerance reached"
                iteration -= 1
                break

            step = alpha if opts.step_rule == "barzilai-borwein-armijo" else opts.initial_step
            g_max = _max_abs(g)
            if g_max > 0.0:
                step = min(step, opts.max_relative_change * _max_abs(x) / g_max)

            accepted = None
            while step >= opts.min_step:
                trial = x - g * step
                if project is not None:
                    trial = project(trial)
                if trial is not None and trial.is_finite():
                    f_t, g_t = evaluate(trial)
                    if np.isfinite(f_t):
                        gg_t = inner(g_t, g_t)
                        sufficient = f_t <= f - opts.armijo_c * step * gg
                        flat = abs(f_t - f) <= ROUNDOFF_FACTOR * eps * max(1.0, abs(f)) and gg_t < gg
                        if sufficient or flat:
                            accepted = (trial, f_t, g_t, gg_t)
                            break
                step *= 0.5

            if accepted is None:
                message = LINE_SEARCH_STALLED
                iteration -= 1
                break

            trial, f_t, g_t, gg_t = accepted
            s = trial - x
            y = g_t - g
            sy = inner(s, y)
            alpha = inner(s, s) / sy if sy > 0.0 else 2.0 * step
            x, f, g, gg = trial, f_t, g_t, gg_t
            g_norm = np.sqrt(gg)
            trace.append((iteration, float(f), float(g_norm)))
            if on_accept is not None:
                on_accept(x)
            progress.update(1)
        else:
            if g_norm <= threshold:
                converged = True
                message = "gradient tolerance reached"
    finally:
        progress.close()

    return DescentResult(x, float(f), float(g_norm), trace, converged, iteration, message)


@dataclass
class MultiplierEstimate:
    omega: float
    multiplier: float
    residual: float
    ella_residual: Optional[float] = None


def extract_multiplier(state: State, spec: ModelSpec) -> MultiplierEstimate:
    """
    Least-squares Lagrange multiplier of E' = lambda C' and the relative
    residual |E' - lambda C'| / |E'|.

    NSE frequencies equal the multiplier; NKG frequencies are its negative,
    and the residual of psi_hat = -i omega psi is reported alongside.

    Raises:
        DomainError: For a state with zero charge gradient
    """
    de = energy_gradient(state, spec)
    dc = charge_gradient(state, spec)
    cc = inner(dc, dc)
    if cc <= 0.0:
        raise DomainError("Charge gradient vanishes; the multiplier is undefined")
    multiplier = inner(de, dc) / cc
    de_norm = norm(de)
    residual = norm(de - dc * multiplier) / de_norm if de_norm > 0.0 else 0.0

    if not spec.is_nkg:
        return MultiplierEstimate(omega=multiplier, multiplier=multiplier, residual=residual)

    omega = -multiplier
    hat_norm = norm(state.psi_hat)
    ella = (
        norm(state.psi_hat + state.psi * (1j * omega)) / hat_norm if hat_norm > 0.0 else 0.0
    )
    return MultiplierEstimate(omega=omega, multiplier=multiplier, residual=residual, ella_residual=ella)


def _recenter_field(values: np.ndarray, density: np.ndarray, grid) -> Tuple[np.ndarray, Tuple[int, ...]]:
    shifts = []
    for axis in range(grid.ndim):
        if not grid.is_periodic(axis):
            shifts.append(0)
            continue
        n = grid.shape[axis]
        other = tuple(a for a in range(grid.ndim) if a != axis)
        marginal = np.sum(density, axis=other) if other else density
        angle = np.angle(np.sum(marginal * np.exp(2j * np.pi * np.arange(n) / n)))
        centroid = (angle * n / (2.0 * np.pi)) % n
        shifts.append(int(np.round(n // 2 - centroid)) % n)
    for axis, offset in enumerate(shifts):
        if offset:
            values = np.roll(values, offset, axis=axis)
    return values, tuple(shifts)


def _centroid_node(values: np.ndarray, grid) -> Tuple[int, ...]:
    """
    Node nearest the charge centroid of an already recentred field, or the
    peak of |values| when the field vanishes there.
    """
    density = grid.weights * np.abs(values) ** 2
    total = np.sum(density)
    node = []
    for axis in range(grid.ndim):
        other = tuple(a for a in range(grid.ndim) if a != axis)
        marginal = np.sum(density, axis=other) if other else density
        index = np.sum(marginal * np.arange(grid.shape[axis])) / total
        node.append(int(np.clip(np.round(index), 0, grid.shape[axis] - 1)))
    node = tuple(node)
    if np.abs(values[node]) <= 1e-8 * np.max(np.abs(values)):
        node = np.unravel_index(np.argmax(np.abs(values)), values.shape)
    return node


def recenter(state: State) -> State:
    """
    Shift the charge centroid (circular mean) to the middle node of every
    periodic axis and fix the phase: real fields get a positive peak,
    complex fields a real positive value at the charge centroid.
    """
    if isinstance(state, NKGState):
        grid = state.grid
        density = grid.weights * np.abs(state.psi.values) ** 2
        psi, shifts = _recenter_field(state.psi.values, density, grid)
        psi_hat = state.psi_hat.values
        for axis, offset in enumerate(shifts):
            if offset:
                psi_hat = np.roll(psi_hat, offset, axis=axis)
        phase = np.exp(-1j * np.angle(psi[_centroid_node(psi, grid)]))
        return NKGState(Field(grid, psi * phase), Field(grid, psi_hat * phase))

    grid = state.grid
    density = grid.weights * np.abs(state.values) ** 2
    values, _ = _recenter_field(state.values, density, grid)
    if np.iscomplexobj(values):
        values = values * np.exp(-1j * np.angle(values[_centroid_node(values, grid)]))
    else:
        peak = np.unravel_index(np.argmax(np.abs(values)), values.shape)
        if values[peak] < 0.0:
            values = -values
    return Field(grid, values)


def _translation_invariant(spec: ModelSpec) -> bool:
    return spec.is_nkg or spec.effective_potential.family == CONSTANT


def _finish(
    state: State,
    spec: ModelSpec,
    result: DescentResult,
    mode: str,
    opts: MinimizeOptions,
    **flags
) -> MinimizeReport:
    if _translation_invariant(spec) and not spec.is_vortex:
        state = recenter(state)
    elif isinstance(state, Field):
        peak = np.unravel_index(np.argmax(np.abs(state.values)), state.values.shape)
        if not state.is_complex and state.values[peak] < 0.0:
            state = -state

    values = evaluate_all(state, spec)
    multiplier = extract_multiplier(state, spec)
    nonnegative = None
    if isinstance(state, Field) and not state.is_complex:
        nonnegative = bool(np.min(state.values) >= -1e-8 * max(state.max_abs(), 1e-300))

    # A stalled line search has no decrease left at working precision
    stopped = result.converged or result.message == LINE_SEARCH_STALLED
    converged = stopped and multiplier.residual <= opts.residual_tolerance
    message = result.message
    if stopped and not converged:
        message = (
            f"{result.message}, but the Euler-Lagrange residual {multiplier.residual:.3e} "
            f"exceeds {opts.residual_tolerance:g}"
        )

    report = MinimizeReport(
        minimizer=state,
        e_delta=values.energy,
        c_delta=abs(values.charge),
        omega=multiplier.omega,
        lambda_value=values.lam,
        el_residual=multiplier.residual,
        ella_residual=multiplier.ella_residual,
        trace=result.trace,
        converged=converged,
        iterations=result.iterations,
        message=message,
        delta=spec.delta,
        j_delta=values.j_delta,
        nonnegative=nonnegative,
        mode=mode,
        **flags,
    )
    logger.info(
        f"{mode} minimization: {message} after {result.iterations} iterations; "
        f"E={report.e_delta:.10g} |C|={report.c_delta:.10g} omega={report.omega:.8g} "
        f"residual={report.el_residual:.3e}"
    )
    return report


def minimize_free(
    spec: ModelSpec,
    init: State,
    opts: Optional[MinimizeOptions] = None,
    lambda0_proxy: Optional[float] = None
) -> MinimizeReport:
    """
    Minimize J_delta = Lambda + delta Phi from an initial state.

    Args:
        spec: Model (delta taken from it)
        init: Initial state with |C| above the charge floor
        opts: Descent options
        lambda0_proxy: Threshold to compare J_delta(init) with

    Returns:
        MinimizeReport (c_delta = |C| of the minimizer)

    Raises:
        DomainError: If the initial charge is below the floor
        NumericalError: If the charge collapses during descent
    """
    opts = opts or MinimizeOptions()
    opts.validate()
    start = evaluate_all(init, spec)
    if start.j_delta is None:
        raise DomainError(
            f"Initial state has |C| = {abs(start.charge):.3e} below the charge floor"
        )

    below = None if lambda0_proxy is None else bool(start.j_delta < lambda0_proxy)
    if below is False:
        logger.warning(
            f"J_delta(init) = {start.j_delta:.8g} is not below the threshold "
            f"{lambda0_proxy:.8g}; descent may leave the hylomorphic basin"
        )

    offset = coercivity_offset(spec.a, spec.s, spec.delta)
    phi_bound = (2.0 / spec.delta) * (start.j_delta + offset)
    bound_held = [True]
    floor = charge_floor(init.grid)

    def evaluate(state):
        if abs(charge(state, spec)) < floor:
            raise NumericalError(
                "Charge collapsed below the floor during descent; delta is likely too large"
            )
        return objective(state, spec, "J")

    def on_accept(state):
        phi = evaluate_all(state, spec).phi
        if phi > phi_bound + 1e-9 * max(1.0, abs(phi_bound)):
            if bound_held[0]:
                logger.warning(f"Phi = {phi:.6g} exceeds the coercivity bound {phi_bound:.6g}")
            bound_held[0] = False

    result = _descend(evaluate, init, opts, on_accept=on_accept, desc=f"J (delta={spec.delta:g})")
    return _finish(
        result.state, spec, result, "free", opts,
        init_below_threshold=below,
        coercivity_bound_held=bound_held[0],
    )


def minimize_constrained(
    spec: ModelSpec,
    c: float,
    init: State,
    opts: Optional[MinimizeOptions] = None
) -> MinimizeReport:
    """
    Minimize E on the level set C = c by projected gradient descent.

    NSE states are rescaled by sqrt(c / C); NKG states keep psi and rescale
    psi_hat by c / C, which requires C(init) != 0.

    Raises:
        DomainError: For a target or initial charge at or below the floor
    """
    opts = opts or MinimizeOptions()
    opts.validate()
    grid = init.grid
    floor = charge_floor(grid)
    if abs(c) <= floor:
        raise DomainError(f"Target charge {c:g} is not above the charge floor {floor:.3e}")
    if not spec.is_nkg and c <= 0.0:
        raise DomainError(f"NSE charges are positive, got target {c:g}")

    def project(state):
        current = charge(state, spec)
        if abs(current) < floor:
            return None
        if spec.is_nkg:
            if np.sign(current) != np.sign(c):
                return None
            return NKGState(state.psi, state.psi_hat * (c / current))
        return state * np.sqrt(c / current)

    start = project(init)
    if start is None:
        raise DomainError("Initial state cannot be scaled onto the requested charge level")

    def evaluate(state):
        e, de = objective(state, spec, "E")
        dc = charge_gradient(state, spec)
        cc = inner(dc, dc)
        tangent = de - dc * (inner(de, dc) / cc) if cc > 0.0 else de
        return e, tangent

    result = _descend(evaluate, start, opts, project=project, desc=f"E (C={c:g})")
    return _finish(result.state, spec, result, "constrained", opts)


def continuation(
    spec: ModelSpec,
    init: State,
    deltas: Sequence[float],
    opts: Optional[MinimizeOptions] = None,
    lambda0_proxy: Optional[float] = None
) -> List[MinimizeReport]:
    """
    Minimize J_delta for a decreasing sequence of deltas, warm-starting each
    stage from the previous minimizer.
    """
    opts = opts or MinimizeOptions()
    if not deltas:
        raise ConfigurationError("Continuation needs at least one delta")
    reports = []
    state = init
    for delta in deltas:
        stage_spec = replace(spec, delta=float(delta))
        logger.info(f"Continuation stage delta = {delta:g}")
        report = minimize_free(stage_spec, state, opts, lambda0_proxy)
        reports.append(report)
        state = report.minimizer
    return reports
