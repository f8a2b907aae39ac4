"""
Model Module

Nonlinearities, potentials and model descriptions, together with the
analytic checks that come with them: coercivity constants, a numerical
Gagliardo-Nirenberg constant and the sufficient-condition test for the
existence of hylomorphic states.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, DomainError
from .grid import CARTESIAN, CYLINDRICAL, Grid

logger = logging.getLogger(__name__)

NSE = "NSE"
NSE_VORTEX = "NSE-VORTEX"
NKG = "NKG"
EQUATIONS = (NSE, NSE_VORTEX, NKG)

NSE_POWER = "nse-power"
NKG_POWER = "nkg-power"
NONLINEARITY_FAMILIES = (NSE_POWER, NKG_POWER)

CONSTANT = "constant"
LATTICE = "lattice"
AXIAL_PERIODIC = "axial-periodic"
POTENTIAL_FAMILIES = (CONSTANT, LATTICE, AXIAL_PERIODIC)

HYPOTHESIS_SCAN = np.logspace(-3.0, 3.0, 601)


@dataclass(frozen=True)
class Nonlinearity:
    """
    Power-law nonlinearity W(s), evaluated on |s|.

    nse-power: W(s) = E0/2 s^2 - (c/p) s^p + d s^q
    nkg-power: W(s) = m^2/2 s^2 - (c/p) s^p + d s^q

    Attributes:
        family: "nse-power" or "nkg-power"
        exponent: p > 2
        coefficient: c >= 0 (c_W for NSE, c_N for NKG)
        mass: m (nkg-power only)
        quadratic: E0 (nse-power only; removed by normalize_quadratic_part)
        stabilizer_coefficient: d >= 0
        stabilizer_exponent: q > p, used when d > 0
    """
    family: str
    exponent: float
    coefficient: float
    mass: float = 0.0
    quadratic: float = 0.0
    stabilizer_coefficient: float = 0.0
    stabilizer_exponent: float = 6.0

    def validate(self):
        if self.family not in NONLINEARITY_FAMILIES:
            raise ConfigurationError(
                f"Unknown nonlinearity family '{self.family}' "
                f"(expected one of {NONLINEARITY_FAMILIES})"
            )
        if not self.exponent > 2.0:
            raise ConfigurationError(f"Nonlinearity exponent must exceed 2, got {self.exponent}")
        if self.coefficient < 0.0:
            raise ConfigurationError(f"Nonlinearity coefficient must be >= 0, got {self.coefficient}")
        if self.stabilizer_coefficient < 0.0:
            raise ConfigurationError("Stabilizer coefficient must be >= 0")
        if self.stabilizer_coefficient > 0.0 and not self.stabilizer_exponent > self.exponent:
            raise ConfigurationError(
                f"Stabilizer exponent ({self.stabilizer_exponent}) must exceed "
                f"the nonlinearity exponent ({self.exponent})"
            )
        if self.family == NKG_POWER:
            if not self.mass > 0.0:
                raise ConfigurationError(f"nkg-power needs a positive mass, got {self.mass}")
            if self.quadratic != 0.0:
                raise ConfigurationError("nkg-power carries its quadratic part in the mass")
        elif self.mass != 0.0:
            raise ConfigurationError("nse-power takes no mass parameter")

    @property
    def quadratic_coefficient(self) -> float:
        """Coefficient of s^2 / 2 in W."""
        if self.family == NKG_POWER:
            return self.mass ** 2
        return self.quadratic

    @property
    def lower_coefficient(self) -> float:
        """c such that the non-quadratic part of W is bounded below by -c s^p."""
        return self.coefficient / self.exponent

    def value(self, s) -> np.ndarray:
        s = np.abs(np.asarray(s, dtype=np.float64))
        w = 0.5 * self.quadratic_coefficient * s ** 2
        w = w - (self.coefficient / self.exponent) * s ** self.exponent
        if self.stabilizer_coefficient > 0.0:
            w = w + self.stabilizer_coefficient * s ** self.stabilizer_exponent
        return w

    def derivative_over_s(self, s) -> np.ndarray:
        """W'(|s|) / |s|, continuous at s = 0."""
        s = np.abs(np.asarray(s, dtype=np.float64))
        g = self.quadratic_coefficient - self.coefficient * s ** (self.exponent - 2.0)
        if self.stabilizer_coefficient > 0.0:
            q = self.stabilizer_exponent
            g = g + self.stabilizer_coefficient * q * s ** (q - 2.0)
        return g

    def derivative(self, s) -> np.ndarray:
        """W'(s) for real s (odd extension)."""
        s = np.asarray(s, dtype=np.float64)
        return self.derivative_over_s(s) * s

    def complex_derivative(self, psi: np.ndarray) -> np.ndarray:
        """W'(psi) = W'(|psi|) psi / |psi|."""
        return self.derivative_over_s(np.abs(psi)) * psi

    def growth_exponents(self) -> Tuple[float, float]:
        """(r, q) with |W'(s)| <= c1 s^(r-1) + c2 s^(q-1) for s >= 0."""
        p = self.exponent
        if self.stabilizer_coefficient > 0.0:
            return p, self.stabilizer_exponent
        return p, p

    def to_dict(self) -> Dict:
        return {
            'family': self.family,
            'exponent': self.exponent,
            'coefficient': self.coefficient,
            'mass': self.mass,
            'quadratic': self.quadratic,
            'stabilizer_coefficient': self.stabilizer_coefficient,
            'stabilizer_exponent': self.stabilizer_exponent,
        }


def eval_W(nonlinearity: Nonlinearity, s) -> np.ndarray:
    return nonlinearity.value(s)


def eval_Wprime(nonlinearity: Nonlinearity, s) -> np.ndarray:
    return nonlinearity.derivative(s)


@dataclass(frozen=True)
class Potential:
    """
    External potential.

    constant:        V = base
    lattice:         V = base + amplitude * prod_i (1 + cos(2 pi y_i)) / 2, y = A^-1 x
    axial-periodic:  V = base + amplitude * (1 + cos(2 pi x3)) / 2
    Non-constant families are clipped to [base, ceiling] when a ceiling is set.
    """
    family: str = CONSTANT
    base: float = 1.0
    amplitude: float = 0.0
    ceiling: Optional[float] = None
    period_matrix: Optional[Tuple[Tuple[float, ...], ...]] = None

    def validate(self):
        if self.family not in POTENTIAL_FAMILIES:
            raise ConfigurationError(
                f"Unknown potential family '{self.family}' (expected one of {POTENTIAL_FAMILIES})"
            )
        if self.amplitude < 0.0:
            raise ConfigurationError(f"Potential amplitude must be >= 0, got {self.amplitude}")
        if self.ceiling is not None and self.ceiling < self.base:
            raise ConfigurationError(
                f"Potential ceiling ({self.ceiling}) lies below its base ({self.base})"
            )
        if self.period_matrix is not None:
            matrix = np.asarray(self.period_matrix, dtype=np.float64)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ConfigurationError("Lattice period matrix must be square")
            if abs(np.linalg.det(matrix)) < 1e-12:
                raise ConfigurationError("Lattice period matrix is singular")

    @property
    def lower_bound(self) -> float:
        return self.base

    @property
    def upper_bound(self) -> float:
        if self.family == CONSTANT:
            return self.base
        top = self.base + self.amplitude
        return top if self.ceiling is None else min(top, self.ceiling)

    def _clip(self, values: np.ndarray) -> np.ndarray:
        if self.ceiling is None:
            return values
        return np.clip(values, self.base, self.ceiling)

    def evaluate(self, *coords: np.ndarray) -> np.ndarray:
        """Evaluate at Cartesian coordinates (x1, ..., xN)."""
        shape = np.broadcast(*coords).shape
        if self.family == CONSTANT:
            return np.full(shape, self.base)
        if self.family == AXIAL_PERIODIC:
            x3 = np.broadcast_to(coords[-1], shape)
            return self._clip(self.base + self.amplitude * 0.5 * (1.0 + np.cos(2.0 * np.pi * x3)))

        points = np.stack([np.broadcast_to(c, shape) for c in coords], axis=-1)
        if self.period_matrix is not None:
            matrix = np.asarray(self.period_matrix, dtype=np.float64)
            if matrix.shape[0] != len(coords):
                raise ConfigurationError(
                    f"Period matrix is {matrix.shape[0]}x{matrix.shape[0]} "
                    f"but the grid has {len(coords)} axes"
                )
            points = np.linalg.solve(matrix, points.reshape(-1, len(coords)).T).T.reshape(points.shape)
        profile = np.prod(0.5 * (1.0 + np.cos(2.0 * np.pi * points)), axis=-1)
        return self._clip(self.base + self.amplitude * profile)

    def sample(self, grid: Grid) -> np.ndarray:
        """Potential values at the grid nodes."""
        if grid.kind == CYLINDRICAL:
            if self.family == LATTICE:
                raise ConfigurationError("Lattice potentials need a Cartesian grid")
            x3 = np.broadcast_to(grid.coords[1][np.newaxis, :], grid.shape)
            return self.evaluate(x3)
        return self.evaluate(*grid.mesh())

    def to_dict(self) -> Dict:
        return {
            'family': self.family,
            'base': self.base,
            'amplitude': self.amplitude,
            'ceiling': self.ceiling,
            'period_matrix': [list(r) for r in self.period_matrix] if self.period_matrix else None,
        }


@dataclass(frozen=True)
class ModelSpec:
    """
    Model description.

    Attributes:
        equation: "NSE", "NSE-VORTEX" or "NKG"
        nonlinearity: Nonlinearity
        potential: Potential (NSE families only)
        winding: Vortex index l (0 outside NSE-VORTEX)
        a: Coercivity weight in Phi = E + 2a|C|^s (0 for NKG)
        s: Coercivity exponent (> 1 for NSE)
        delta: Weight of Phi in the penalised functional
    """
    equation: str
    nonlinearity: Nonlinearity
    potential: Optional[Potential] = None
    winding: int = 0
    a: float = 0.0
    s: float = 2.0
    delta: float = 0.01

    @property
    def is_nkg(self) -> bool:
        return self.equation == NKG

    @property
    def is_vortex(self) -> bool:
        return self.equation == NSE_VORTEX

    def validate(self, grid: Optional[Grid] = None):
        """
        Check the model invariants, and their compatibility with a grid
        when one is given.

        Raises:
            ConfigurationError: Naming the violated requirement
        """
        if self.equation not in EQUATIONS:
            raise ConfigurationError(
                f"Unknown equation '{self.equation}' (expected one of {EQUATIONS})"
            )
        self.nonlinearity.validate()
        expected = NKG_POWER if self.is_nkg else NSE_POWER
        if self.nonlinearity.family != expected:
            raise ConfigurationError(
                f"Equation {self.equation} needs a {expected} nonlinearity, "
                f"got {self.nonlinearity.family}"
            )
        if not self.delta > 0.0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}")
        if int(self.winding) != self.winding:
            raise ConfigurationError(f"Winding must be an integer, got {self.winding}")
        if self.winding != 0 and not self.is_vortex:
            raise ConfigurationError("A non-zero winding needs the NSE-VORTEX equation")

        if self.is_nkg:
            if self.a != 0.0:
                raise ConfigurationError(f"NKG uses a = 0, got a = {self.a}")
            if self.potential is not None:
                raise ConfigurationError("NKG models take no external potential")
        else:
            if not self.a > 0.0:
                raise ConfigurationError(f"NSE models need a > 0, got a = {self.a}")
            if not self.s > 1.0:
                raise ConfigurationError(f"NSE models need s > 1, got s = {self.s}")
            potential = self.potential or Potential()
            potential.validate()
            if potential.lower_bound < 1.0:
                raise ConfigurationError(
                    f"Potential must satisfy V >= 1 (lower bound {potential.lower_bound}); "
                    "enable model.normalize to shift it"
                )

        if grid is not None:
            self._validate_grid(grid)

    def _validate_grid(self, grid: Grid):
        if self.is_vortex and grid.kind != CYLINDRICAL:
            raise ConfigurationError("NSE-VORTEX runs on a cylindrical grid")
        if not self.is_vortex and grid.kind != CARTESIAN:
            raise ConfigurationError(f"{self.equation} runs on a Cartesian grid")

        n = grid.dimension
        p = self.nonlinearity.exponent
        if self.is_nkg:
            if n >= 3:
                limit = 2.0 * n / (n - 2.0)
                for exponent in self.nonlinearity.growth_exponents():
                    if not exponent < limit:
                        raise ConfigurationError(
                            f"Growth hypothesis violated: exponent {exponent} must stay "
                            f"below 2N/(N-2) = {limit} in dimension {n}"
                        )
        else:
            limit = 2.0 + 4.0 / n
            if not p < limit:
                raise ConfigurationError(
                    f"Subcritical growth hypothesis violated: p = {p} must stay "
                    f"below 2 + 4/N = {limit} in dimension {n}"
                )

    @property
    def effective_potential(self) -> Potential:
        return self.potential or Potential()

    def to_dict(self) -> Dict:
        return {
            'equation': self.equation,
            'nonlinearity': self.nonlinearity.to_dict(),
            'potential': self.potential.to_dict() if self.potential else None,
            'winding': self.winding,
            'a': self.a,
            's': self.s,
            'delta': self.delta,
        }


@dataclass
class CoercivityConstants:
    """Exponents and weights of the a|C|^s coercivity term."""
    q: float
    gamma: float
    gamma_prime: float
    M: float
    s: float
    K: float
    a: float


def coercivity_constants(N: int, p: float, c: float, b_p: float) -> CoercivityConstants:
    """
    Constants making E + a C^s bounded below for W(s) >= -c s^p.

    With q = N(p-2)/2 the Gagliardo-Nirenberg bound gives
    integral c|u|^p <= K |grad u|^q |u|^(p-q), K = c b_p^p; Young's inequality
    with exponents gamma = 2/q, gamma' = gamma/(gamma-1) absorbs the gradient
    factor into |grad u|^2 / 2.

    Args:
        N: Spatial dimension
        p: Nonlinearity exponent
        c: Lower-bound coefficient of the nonlinearity
        b_p: Gagliardo-Nirenberg constant estimate

    Returns:
        CoercivityConstants

    Raises:
        DomainError: If p lies outside (2, 2 + 4/N)
    """
    if not (2.0 < p < 2.0 + 4.0 / N):
        raise DomainError(f"Exponent p = {p} lies outside (2, 2 + 4/{N})")
    if c < 0.0 or b_p <= 0.0:
        raise DomainError(f"Need c >= 0 and b_p > 0, got c = {c}, b_p = {b_p}")

    q = N * (p - 2.0) / 2.0
    gamma = 2.0 / q
    gamma_prime = gamma / (gamma - 1.0)
    M = (gamma / 2.0) ** (1.0 / gamma)
    s = (p - q) * gamma_prime / 2.0
    K = c * b_p ** p
    a = (K / M) ** gamma_prime / gamma_prime
    assert q < 2.0 and s > 1.0
    return CoercivityConstants(q=q, gamma=gamma, gamma_prime=gamma_prime, M=M, s=s, K=K, a=a)


def _gn_log_ratio(values: np.ndarray, grid: Grid, p: float, theta: float):
    """log(|u|_p / (|grad u|^theta |u|_2^(1-theta))) and its gradient."""
    u = values.reshape(grid.shape)
    w = grid.weights
    absu = np.abs(u)
    P = float(np.sum(w * absu ** p))
    Q = float(np.sum(w * u ** 2))
    D = grid.grad_inner_values(u, u)
    if P <= 0.0 or Q <= 0.0 or D <= 0.0:
        return -np.inf, np.zeros_like(values)
    ratio = np.log(P) / p - 0.5 * theta * np.log(D) - 0.5 * (1.0 - theta) * np.log(Q)
    ku = -w * grid.laplacian_values(u)
    grad = w * absu ** (p - 2.0) * u / P - theta * ku / D - (1.0 - theta) * w * u / Q
    return ratio, grad.ravel()


def _gn_trial_fields(grid: Grid) -> Sequence[np.ndarray]:
    mesh = grid.mesh()
    center = grid.center()
    dist2 = sum((x - c) ** 2 for x, c in zip(mesh, center))
    dist = np.sqrt(dist2)
    h = min(grid.spacings)
    extent = min(d.upper - d.lower for d in grid.spec.dims)
    trials = []
    for width in np.geomspace(h, 0.25 * extent, 16):
        trials.append(np.exp(-0.5 * dist2 / width ** 2))
        trials.append(1.0 / np.cosh(dist / width))
    spike = np.zeros(grid.shape)
    spike[tuple(int(np.argmin(np.abs(x - c))) for x, c in zip(grid.coords, center))] = 1.0
    trials.append(spike)
    return trials


def estimate_gn_constant(
    N: int,
    p: float,
    grid: Grid,
    safety: float = 1.1,
    max_iters: int = 200
) -> float:
    """
    Numerical estimate of the Gagliardo-Nirenberg constant on a grid.

    Evaluates the ratio on Gaussian, sech and single-node trial fields,
    refines the best one with L-BFGS-B and returns the supremum found times
    a safety factor.

    Args:
        N: Spatial dimension used for the interpolation exponent
        p: Exponent
        grid: Grid the estimate is taken on
        safety: Multiplicative safety factor (> 1)
        max_iters: L-BFGS-B iteration cap

    Returns:
        Estimated constant b_p
    """
    if not p > 2.0:
        raise DomainError(f"Gagliardo-Nirenberg estimate needs p > 2, got {p}")
    theta = N * (0.5 - 1.0 / p)

    best_ratio = -np.inf
    best_field = None
    for trial in _gn_trial_fields(grid):
        ratio, _ = _gn_log_ratio(trial.ravel(), grid, p, theta)
        if ratio > best_ratio:
            best_ratio, best_field = ratio, trial

    result = optimize.minimize(
        lambda x: tuple(-v for v in _gn_log_ratio(x, grid, p, theta)),
        best_field.ravel(),
        jac=True,
        method='L-BFGS-B',
        options={'maxiter': max_iters},
    )
    if np.isfinite(result.fun) and -result.fun > best_ratio:
        best_ratio = -result.fun

    estimate = safety * float(np.exp(best_ratio))
    logger.info(f"Gagliardo-Nirenberg estimate b_{p:g} (N={N}) = {estimate:.6g}")
    return estimate


def resolve_coercivity(spec: ModelSpec, grid: Grid) -> ModelSpec:
    """
    Fill in a and s for an NSE model from the numerical GN constant.
    """
    if spec.is_nkg:
        return replace(spec, a=0.0)
    nl = spec.nonlinearity
    b_p = estimate_gn_constant(grid.dimension, nl.exponent, grid)
    constants = coercivity_constants(grid.dimension, nl.exponent, nl.lower_coefficient, b_p)
    logger.info(f"Coercivity constants: a = {constants.a:.6g}, s = {constants.s:.6g}")
    return replace(spec, a=constants.a, s=constants.s)


@dataclass
class HypothesisCheck:
    """Outcome of the sufficient-condition test."""
    holds: bool
    s0: float
    margin: float
    potential_bounds: Optional[Tuple[float, float]] = None
    scanned: int = 0

    def to_dict(self) -> Dict:
        return {
            'holds': self.holds,
            's0': self.s0,
            'margin': self.margin,
            'potential_bounds': list(self.potential_bounds) if self.potential_bounds else None,
            'scanned': self.scanned,
        }


def _potential_bounds(spec: ModelSpec, grid: Optional[Grid]) -> Tuple[float, float]:
    potential = spec.effective_potential
    if grid is not None:
        values = potential.sample(grid)
        return float(np.min(values)), float(np.max(values))
    return potential.lower_bound, potential.upper_bound


def hylomorphy_margin(
    spec: ModelSpec,
    s0,
    potential_bounds: Optional[Tuple[float, float]] = None
) -> np.ndarray:
    """
    Margin of the sufficient condition at amplitude s0 (positive means it holds).

    NSE: (inf V - sup V) - W(s0) / s0^2
    NKG: m^2 s0^2 / 2 - W(s0)
    """
    s0 = np.asarray(s0, dtype=np.float64)
    w = spec.nonlinearity.value(s0)
    if spec.is_nkg:
        return 0.5 * spec.nonlinearity.mass ** 2 * s0 ** 2 - w
    low, high = potential_bounds or _potential_bounds(spec, None)
    return (low - high) - w / s0 ** 2


def check_hylomorphy_hypothesis(
    spec: ModelSpec,
    grid: Optional[Grid] = None,
    scan: np.ndarray = HYPOTHESIS_SCAN
) -> HypothesisCheck:
    """
    Search for an amplitude s0 satisfying the sufficient condition.

    Args:
        spec: Model
        grid: When given, potential bounds are taken from the sampled potential
        scan: Amplitudes to try

    Returns:
        HypothesisCheck with the best amplitude and its margin
    """
    bounds = None if spec.is_nkg else _potential_bounds(spec, grid)
    margins = hylomorphy_margin(spec, scan, bounds)
    best = int(np.argmax(margins))
    check = HypothesisCheck(
        holds=bool(margins[best] > 0.0),
        s0=float(scan[best]),
        margin=float(margins[best]),
        potential_bounds=bounds,
        scanned=len(scan),
    )
    logger.debug(f"Hypothesis check: holds={check.holds} s0={check.s0:.4g} margin={check.margin:.4g}")
    return check


def normalize_quadratic_part(spec: ModelSpec) -> Tuple[ModelSpec, float]:
    """
    Move an NSE model to the normalized form W''(0) = 0, inf V = 1.

    Returns:
        (normalized spec, omega shift) with
        omega(original) = omega(normalized) + omega shift
    """
    if spec.is_nkg:
        return spec, 0.0
    e0 = spec.nonlinearity.quadratic
    potential = spec.effective_potential
    e1 = potential.lower_bound
    shift = 1.0 - e1
    ceiling = None if potential.ceiling is None else potential.ceiling + shift
    normalized = replace(
        spec,
        nonlinearity=replace(spec.nonlinearity, quadratic=0.0),
        potential=replace(potential, base=1.0, ceiling=ceiling),
    )
    omega_shift = 0.5 * (e0 + 2.0 * e1 - 2.0)
    logger.info(f"Normalized model: E0 = {e0:g}, E1 = {e1:g}, omega shift = {omega_shift:g}")
    return normalized, omega_shift
