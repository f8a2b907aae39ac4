"""
Hylomorphy Module

Test functions that witness hylomorphy: the plateau profile for NSE/NKG
and the torus profile for vortices, the parameter sweep over them and the
resulting report.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .errors import ConfigurationError, DomainError
from .functionals import evaluate_all, rayleigh_quotient_min
from .grid import CYLINDRICAL, Field, Grid, NKGState
from .model import ModelSpec, check_hylomorphy_hypothesis, hylomorphy_margin

logger = logging.getLogger(__name__)

DEFAULT_AMPLITUDE = 1.0
PLATEAU_FACTORS = (4, 8, 16, 32)
TORUS_RADII = (8.0, 16.0, 32.0)
BETA_GUARD = 1e-9


def _radial_distance(grid: Grid) -> np.ndarray:
    """Distance from the box center (cylindrical: from the axis point at mid-height)."""
    mesh = grid.mesh()
    if grid.kind == CYLINDRICAL:
        r, x3 = mesh
        return np.sqrt(r ** 2 + (x3 - grid.center()[1]) ** 2)
    return np.sqrt(sum((x - c) ** 2 for x, c in zip(mesh, grid.center())))


def _check_coverage(grid: Grid, reach: float, label: str):
    for axis, (dim, h) in enumerate(zip(grid.spec.dims, grid.spacings)):
        needed = reach + 2.0 * h
        if grid.kind == CYLINDRICAL and axis == 0:
            available = dim.upper
        else:
            available = 0.5 * (dim.upper - dim.lower)
        if available < needed:
            raise ConfigurationError(
                f"{label} needs a half-extent of {needed:g} on axis {axis}, "
                f"the grid offers {available:g}"
            )


def plateau_test_function(R: float, s0: float, grid: Grid) -> Field:
    """
    s0 on the ball of radius R, linear ramp to 0 on R <= |x| <= R + 1.

    Raises:
        ConfigurationError: If the support does not fit in the grid
    """
    if R <= 0.0:
        raise DomainError(f"Plateau radius must be positive, got {R}")
    _check_coverage(grid, R + 1.0, f"Plateau R={R:g}")
    rho = _radial_distance(grid)
    return Field(grid, s0 * np.clip(R + 1.0 - rho, 0.0, 1.0))


def torus_test_function(lam: float, s0: float, grid: Grid) -> Field:
    """
    Cylindrical torus profile: s0 on the disc of radius lam / 2 around
    (r, x3) = (lam, mid-height), linear ramp to 0 one unit further out.
    """
    if grid.kind != CYLINDRICAL:
        raise ConfigurationError("Torus test functions need a cylindrical grid")
    if lam <= 0.0:
        raise DomainError(f"Torus radius must be positive, got {lam}")
    r_dim, z_dim = grid.spec.dims
    outer = 1.5 * lam + 1.0 + 2.0 * grid.spacings[0]
    if r_dim.upper < outer:
        raise ConfigurationError(
            f"Torus lambda={lam:g} needs r up to {outer:g}, the grid stops at {r_dim.upper:g}"
        )
    half_height = 0.5 * (z_dim.upper - z_dim.lower)
    if half_height < 0.5 * lam + 1.0 + 2.0 * grid.spacings[1]:
        raise ConfigurationError(
            f"Torus lambda={lam:g} needs a half-height of {0.5 * lam + 1.0:g}, "
            f"the grid offers {half_height:g}"
        )
    r, x3 = grid.mesh()
    rho = np.sqrt((r - lam) ** 2 + (x3 - grid.center()[1]) ** 2)
    return Field(grid, s0 * np.clip(0.5 * lam + 1.0 - rho, 0.0, 1.0))


def nkg_velocity(spec: ModelSpec, s0: float) -> float:
    """beta = sqrt(2 W(s0)) / s0 for the pair (u, -i beta u)."""
    w = float(spec.nonlinearity.value(s0))
    if w <= 0.0:
        raise DomainError(f"W(s0) = {w:g} <= 0; choose an amplitude inside the positivity range")
    return float(np.sqrt(2.0 * w) / s0)


def default_sweep(spec: ModelSpec, grid: Grid) -> List[float]:
    """Plateau radii scaled to the box, or the standard torus radii."""
    if spec.is_vortex:
        return list(TORUS_RADII)
    half = min(0.5 * (d.upper - d.lower) for d in grid.spec.dims)
    return [f * half / 64.0 for f in PLATEAU_FACTORS]


@dataclass
class HylomorphyReport:
    """Outcome of a test-function sweep."""
    lambda0_proxy: float
    best_test_lambda: float
    best_parameter: float
    sweep: List[Tuple[float, float]] = field(default_factory=list)
    parameter_name: str = "R"
    s0: float = DEFAULT_AMPLITUDE
    beta: Optional[float] = None
    analytic_margin: Optional[float] = None
    hypothesis_holds: Optional[bool] = None
    threshold_note: str = "lambda0 proxy = minimum of the quadratic Rayleigh quotient"

    @property
    def verdict(self) -> bool:
        return self.best_test_lambda < self.lambda0_proxy

    def to_dict(self) -> Dict:
        return {
            'lambda0_proxy': self.lambda0_proxy,
            'best_test_lambda': self.best_test_lambda,
            'best_parameter': self.best_parameter,
            'parameter_name': self.parameter_name,
            'sweep': [{self.parameter_name: p, 'Lambda': v} for p, v in self.sweep],
            'verdict': self.verdict,
            's0': self.s0,
            'beta': self.beta,
            'analytic_margin': self.analytic_margin,
            'hypothesis_holds': self.hypothesis_holds,
            'threshold_note': self.threshold_note,
        }

    def sweep_rows(self) -> List[Dict]:
        return [{self.parameter_name: p, 'Lambda': v} for p, v in self.sweep]


def build_test_state(spec: ModelSpec, grid: Grid, parameter: float, s0: float):
    """Test state for one sweep parameter; NKG states come with psi_hat = -i beta u."""
    if spec.is_vortex:
        return torus_test_function(parameter, s0, grid)
    profile = plateau_test_function(parameter, s0, grid)
    if not spec.is_nkg:
        return profile
    mass = spec.nonlinearity.mass
    beta = nkg_velocity(spec, s0)
    if beta >= mass - BETA_GUARD:
        logger.warning(f"beta = {beta:.6g} is not below m = {mass:g}; clamping")
        beta = mass - BETA_GUARD
    return NKGState(profile, profile * (-1j * beta))


def hylomorphy_check(
    spec: ModelSpec,
    grid: Grid,
    values: Optional[Sequence[float]] = None,
    s0: float = DEFAULT_AMPLITUDE,
    show_progress: bool = False
) -> HylomorphyReport:
    """
    Sweep the test family and compare its best Lambda with the threshold.

    Args:
        spec: Model
        grid: Grid large enough for every swept profile
        values: Plateau radii R or torus radii lambda (defaults per model)
        s0: Plateau amplitude
        show_progress: Show a tqdm bar over the sweep

    Returns:
        HylomorphyReport (verdict: best Lambda < threshold)
    """
    hypothesis = check_hylomorphy_hypothesis(spec, grid)
    if not hypothesis.holds:
        logger.warning(
            f"Sufficient condition fails (best margin {hypothesis.margin:.4g}); "
            "the sweep may not find a hylomorphic state"
        )

    values = list(values) if values is not None else default_sweep(spec, grid)
    if not values:
        raise ConfigurationError("Hylomorphy sweep needs at least one parameter value")

    threshold = rayleigh_quotient_min(spec, grid)
    logger.info(f"Threshold (Rayleigh quotient minimum): {threshold:.8g}")

    sweep = []
    iterator = tqdm(values, desc="Test functions", unit="profile", disable=not show_progress)
    for parameter in iterator:
        state = build_test_state(spec, grid, float(parameter), s0)
        result = evaluate_all(state, spec)
        if result.lam is None:
            raise DomainError(f"Test function at {parameter:g} has charge below the floor")
        sweep.append((float(parameter), float(result.lam)))
        logger.debug(f"  parameter={parameter:g} Lambda={result.lam:.8g}")

    best_parameter, best_lambda = min(sweep, key=lambda item: item[1])
    beta = nkg_velocity(spec, s0) if spec.is_nkg else None
    bounds = None if spec.is_nkg else hypothesis.potential_bounds
    report = HylomorphyReport(
        lambda0_proxy=threshold,
        best_test_lambda=best_lambda,
        best_parameter=best_parameter,
        sweep=sweep,
        parameter_name="lambda" if spec.is_vortex else "R",
        s0=s0,
        beta=beta,
        analytic_margin=float(hylomorphy_margin(spec, s0, bounds)),
        hypothesis_holds=hypothesis.holds,
    )
    logger.info(
        f"Best test Lambda {best_lambda:.8g} at {report.parameter_name}={best_parameter:g}; "
        f"verdict: {'hylomorphic' if report.verdict else 'not shown'}"
    )
    return report
