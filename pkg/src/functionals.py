"""
Functionals Module

Discrete energy, charge, hylomorphy ratio, coercive functional and the
penalised objective, their first variations, the quadratic Rayleigh
quotient minimum and the splitting-property defect.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .errors import DomainError, NumericalError, UsageError
from .grid import Field, Grid, NKGState, State, dirichlet_energy, inner, laplacian, norm
from .model import ModelSpec

logger = logging.getLogger(__name__)

CHARGE_FLOOR_FACTOR = 1e-10
VARIATIONS = ("E", "C", "Phi", "Lambda", "J")


def charge_floor(grid: Grid) -> float:
    """Charges with |C| below this value leave Lambda and J undefined."""
    return CHARGE_FLOOR_FACTOR * grid.volume


def _check_state(state: State, spec: ModelSpec) -> Grid:
    if spec.is_nkg:
        if not isinstance(state, NKGState):
            raise UsageError("NKG functionals need an NKGState (psi, psi_hat)")
        return state.grid
    if not isinstance(state, Field):
        raise UsageError(f"{spec.equation} functionals need a single Field")
    return state.grid


@lru_cache(maxsize=32)
def potential_values(grid: Grid, spec: ModelSpec) -> np.ndarray:
    """
    Pointwise quadratic weight of the NSE energy: V plus l^2 / (2 r^2) on
    cylindrical grids. Zero for NKG.
    """
    if spec.is_nkg:
        values = np.zeros(grid.shape)
    else:
        values = np.array(spec.effective_potential.sample(grid), dtype=np.float64)
        if spec.is_vortex and spec.winding != 0:
            values = values + 0.5 * spec.winding ** 2 / grid.radius ** 2
    values.setflags(write=False)
    return values


def energy(state: State, spec: ModelSpec) -> float:
    grid = _check_state(state, spec)
    nl = spec.nonlinearity
    if spec.is_nkg:
        psi = state.psi.values
        return (
            0.5 * grid.integrate_values(np.abs(state.psi_hat.values) ** 2)
            + 0.5 * dirichlet_energy(state.psi)
            + grid.integrate_values(nl.value(np.abs(psi)))
        )
    u = state.values
    absu = np.abs(u)
    return (
        0.5 * dirichlet_energy(state)
        + grid.integrate_values(potential_values(grid, spec) * absu ** 2)
        + grid.integrate_values(nl.value(absu))
    )


def charge(state: State, spec: ModelSpec) -> float:
    grid = _check_state(state, spec)
    if spec.is_nkg:
        return grid.integrate_values(np.imag(state.psi_hat.values * np.conj(state.psi.values)))
    return grid.integrate_values(np.abs(state.values) ** 2)


def energy_gradient(state: State, spec: ModelSpec) -> State:
    """L2 gradient of E."""
    grid = _check_state(state, spec)
    nl = spec.nonlinearity
    if spec.is_nkg:
        psi = state.psi
        force = -laplacian(psi).values + nl.complex_derivative(psi.values)
        return NKGState(Field(grid, force), state.psi_hat.copy())
    u = state.values
    values = (
        -laplacian(state).values
        + 2.0 * potential_values(grid, spec) * u
        + nl.derivative_over_s(np.abs(u)) * u
    )
    return Field(grid, values)


def charge_gradient(state: State, spec: ModelSpec) -> State:
    """L2 gradient of C."""
    _check_state(state, spec)
    if spec.is_nkg:
        return NKGState(state.psi_hat * (-1j), state.psi * 1j)
    return state * 2.0


@dataclass
class FunctionalValues:
    """E, C and the derived functionals at one state."""
    energy: float
    charge: float
    phi: float
    lam: Optional[float]
    j_delta: Optional[float]

    @property
    def defined(self) -> bool:
        return self.lam is not None

    def to_dict(self) -> Dict:
        return {
            'E': self.energy,
            'C': self.charge,
            'Phi': self.phi,
            'Lambda': self.lam,
            'J_delta': self.j_delta,
            'defined': self.defined,
        }


def _phi(e: float, c: float, spec: ModelSpec) -> float:
    return e + 2.0 * spec.a * abs(c) ** spec.s


def evaluate_all(state: State, spec: ModelSpec) -> FunctionalValues:
    """
    Evaluate E, C, Phi and, when |C| clears the charge floor, Lambda and J.
    """
    grid = _check_state(state, spec)
    e = energy(state, spec)
    c = charge(state, spec)
    phi = _phi(e, c, spec)
    if abs(c) < charge_floor(grid):
        return FunctionalValues(energy=e, charge=c, phi=phi, lam=None, j_delta=None)
    lam = e / abs(c)
    return FunctionalValues(energy=e, charge=c, phi=phi, lam=lam, j_delta=lam + spec.delta * phi)


def _combine(x: State, alpha: float, y: State, beta: float) -> State:
    return x * alpha + y * beta


def objective(state: State, spec: ModelSpec, which: str = "J") -> Tuple[float, State]:
    """
    Value and L2 gradient of one functional.

    Args:
        state: Field (NSE) or NKGState (NKG)
        spec: Model
        which: "E", "C", "Phi", "Lambda" or "J"

    Returns:
        (value, gradient)

    Raises:
        DomainError: For Lambda or J below the charge floor
    """
    if which not in VARIATIONS:
        raise UsageError(f"Unknown functional '{which}' (expected one of {VARIATIONS})")
    grid = _check_state(state, spec)
    e = energy(state, spec)
    c = charge(state, spec)
    de = energy_gradient(state, spec)
    if which == "E":
        return e, de
    dc = charge_gradient(state, spec)
    if which == "C":
        return c, dc

    sign = 1.0 if c >= 0.0 else -1.0
    abs_c = abs(c)
    phi = _phi(e, c, spec)
    dphi = _combine(de, 1.0, dc, 2.0 * spec.a * spec.s * abs_c ** (spec.s - 1.0) * sign)
    if which == "Phi":
        return phi, dphi

    if abs_c < charge_floor(grid):
        raise DomainError(
            f"|C| = {abs_c:.3e} lies below the charge floor {charge_floor(grid):.3e}; "
            "Lambda is undefined"
        )
    lam = e / abs_c
    dlam = _combine(de, 1.0 / abs_c, dc, -e * sign / c ** 2)
    if which == "Lambda":
        return lam, dlam
    return lam + spec.delta * phi, _combine(dlam, 1.0, dphi, spec.delta)


def first_variation(state: State, spec: ModelSpec, which: str) -> State:
    """L2 gradient of E, C, Phi, Lambda or J at a state."""
    return objective(state, spec, which)[1]


def rayleigh_quotient_min(
    spec: ModelSpec,
    grid: Grid,
    tol: float = 1e-8,
    max_iters: int = 200,
    shift_margin: float = 1e-3
) -> float:
    """
    Minimum of the quadratic Rayleigh quotient
    (integral of |grad u|^2 / 2 + (V + l^2 / 2r^2) u^2) / integral of u^2.

    NSE families use shifted inverse-power iteration on the symmetrized
    operator W^-1/2 A W^-1/2 with conjugate-gradient inner solves. For NKG
    the value is the mass m.

    Raises:
        NumericalError: If the iteration does not converge within max_iters
    """
    if spec.is_nkg:
        return float(spec.nonlinearity.mass)

    weights = grid.weights.ravel()
    v = potential_values(grid, spec).ravel()
    inv_sqrt_w = sparse.diags(1.0 / np.sqrt(weights))
    stiffness = 0.5 * grid.stiffness_matrix + sparse.diags(weights * v)
    operator = (inv_sqrt_w @ stiffness @ inv_sqrt_w).tocsr()

    sigma = float(np.min(v)) - shift_margin * max(1.0, abs(float(np.min(v))))
    shifted = (operator - sigma * sparse.identity(grid.size)).tocsr()

    y = np.sqrt(weights)
    y = y / np.linalg.norm(y)
    mu = float(y @ (operator @ y))
    trace = [mu]
    for iteration in range(1, max_iters + 1):
        z, info = cg(shifted, y, x0=y / max(mu - sigma, 1e-300), rtol=1e-12, maxiter=20 * grid.size)
        if info < 0:
            raise NumericalError(f"Conjugate-gradient breakdown (info={info})", trace)
        y = z / np.linalg.norm(z)
        mu_new = float(y @ (operator @ y))
        trace.append(mu_new)
        if abs(mu_new - mu) <= tol * max(1.0, abs(mu_new)):
            logger.debug(f"Rayleigh quotient minimum {mu_new:.10g} after {iteration} iterations")
            return mu_new
        mu = mu_new

    raise NumericalError(
        f"Inverse power iteration did not converge in {max_iters} iterations", trace
    )


def splitting_defect(spec: ModelSpec, which: str, u: State, w: State) -> float:
    """|F(u + w) - F(u) - F(w)| for F = E or C."""
    if which == "E":
        functional = energy
    elif which == "C":
        functional = charge
    else:
        raise UsageError(f"Splitting defect is defined for E and C, not '{which}'")
    return abs(functional(u + w, spec) - functional(u, spec) - functional(w, spec))


def coercivity_offset(a: float, s: float, delta: float) -> float:
    """
    M with J_delta >= (delta / 2) Phi - M whenever E + a C^s >= 0.

    The bound comes from minimising (delta / 2) a t^s - a t^(s-1) over t > 0,
    attained at t = 2(s - 1) / (delta s).
    """
    if a <= 0.0:
        return 0.0
    if not s > 1.0 or not delta > 0.0:
        raise DomainError(f"coercivity_offset needs s > 1 and delta > 0 (s={s}, delta={delta})")
    t_star = 2.0 * (s - 1.0) / (delta * s)
    return a * t_star ** (s - 1.0) / s


def sharp_seminorm(state: State, spec: ModelSpec) -> float:
    """max(|psi|_Lr, |psi|_Lq) for the growth exponents (r, q) of W."""
    grid = _check_state(state, spec)
    values = np.abs(state.psi.values if spec.is_nkg else state.values)
    norms = []
    for exponent in spec.nonlinearity.growth_exponents():
        norms.append(grid.integrate_values(values ** exponent) ** (1.0 / exponent))
    return float(max(norms))


def nkg_small_amplitude_bound(spec: ModelSpec, eps: float) -> float:
    """
    Lower bound m sqrt(1 - 2 eps^(s-2)) on Lambda for NKG states with
    sharp seminorm at most eps, where s = (2 + min(r, q)) / 2.
    """
    if not spec.is_nkg:
        raise UsageError("The small-amplitude bound applies to NKG models")
    if eps <= 0.0:
        raise DomainError(f"eps must be positive, got {eps}")
    r, q = spec.nonlinearity.growth_exponents()
    s = 0.5 * (2.0 + min(r, q))
    radicand = 1.0 - 2.0 * eps ** (s - 2.0)
    return float(spec.nonlinearity.mass * np.sqrt(max(radicand, 0.0)))


def gradient_check(
    state: State,
    spec: ModelSpec,
    which: str,
    direction: State,
    step: float = 1e-6
) -> float:
    """
    Relative mismatch between the analytic directional derivative of a
    functional and its central finite difference.
    """
    value, gradient = objective(state, spec, which)
    analytic = inner(gradient, direction)
    plus = objective(state + direction * step, spec, which)[0]
    minus = objective(state - direction * step, spec, which)[0]
    numeric = (plus - minus) / (2.0 * step)
    scale = max(abs(analytic), abs(numeric), norm(gradient) * norm(direction) * 1e-3, 1e-300)
    return abs(analytic - numeric) / scale
