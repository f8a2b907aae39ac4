"""
Configuration Module

Turns the YAML run configuration into validated settings objects. Every
section rejects keys it does not know, and all checks run before any
computation starts.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .errors import ConfigurationError
from .grid import Grid, GridSpec, build_grid
from .minimize import MinimizeOptions
from .model import (
    ModelSpec,
    Nonlinearity,
    Potential,
    normalize_quadratic_part,
    resolve_coercivity,
)

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {
    'grid', 'model', 'minimize', 'hylomorphy', 'evolve', 'verify', 'output',
    'deterministic', 'seed', 'log_level', 'log_file',
}
GRID_KEYS = {'kind', 'dims', 'boundary'}
MODEL_KEYS = {'equation', 'nonlinearity', 'potential', 'winding', 'a', 's', 'delta', 'normalize'}
NONLINEARITY_KEYS = {
    'family', 'exponent', 'coefficient', 'mass', 'quadratic',
    'stabilizer_coefficient', 'stabilizer_exponent',
}
POTENTIAL_KEYS = {'family', 'base', 'amplitude', 'ceiling', 'period_matrix'}
MINIMIZE_KEYS = {
    'max_iters', 'tolerance', 'residual_tolerance', 'step_rule', 'initial_step', 'rng_seed',
    'continuation_deltas', 'max_relative_change', 'init', 'init_parameter',
    'constrained_check',
}
HYLOMORPHY_KEYS = {'values', 's0'}
EVOLVE_KEYS = {
    'T', 'dt', 'sample_every', 'reference', 'noise', 'scale', 'ensemble_size',
    'seed', 'reversibility_steps', 'standing_wave_check', 'lift',
}
LIFT_KEYS = {'dims', 'boundary'}
VERIFY_KEYS = {'samples', 'evolve_steps', 'dt'}
OUTPUT_KEYS = {'directory', 'profile_csv', 'snapshots'}

INIT_KINDS = ('auto', 'plateau', 'torus', 'gaussian')
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


def _section(raw: Dict[str, Any], name: str, allowed: set) -> Dict[str, Any]:
    data = raw.get(name) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Section '{name}' must be a mapping")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in '{name}': {', '.join(unknown)}")
    return data


def _number(data: Dict[str, Any], key: str, default: Any, section: str, kind=float):
    value = data.get(key, default)
    if value is None:
        return None
    try:
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"'{section}.{key}' must be a {kind.__name__}, got {value!r}") from e


@dataclass
class SolveSettings:
    """Initial guess and post-checks of the solve workflow."""
    init: str = 'auto'
    init_parameter: Optional[float] = None
    constrained_check: bool = True


@dataclass
class HylomorphySettings:
    values: Optional[List[float]] = None
    s0: float = 1.0


@dataclass
class EvolveSettings:
    T: float = 10.0
    dt: Optional[float] = None
    sample_every: int = 10
    reference: Optional[str] = None
    noise: float = 0.01
    scale: float = 1.0
    ensemble_size: int = 1
    seed: int = 0
    reversibility_steps: int = 0
    standing_wave_check: bool = True
    lift: Optional[GridSpec] = None


@dataclass
class VerifySettings:
    samples: int = 1000
    evolve_steps: int = 200
    dt: Optional[float] = None


@dataclass
class OutputSettings:
    directory: str = 'results'
    profile_csv: bool = True
    snapshots: bool = True


@dataclass
class RunConfig:
    """Validated run configuration."""
    grid: GridSpec
    model: ModelSpec
    auto_coercivity: bool = False
    normalize: bool = False
    minimize: MinimizeOptions = field(default_factory=MinimizeOptions)
    solve: SolveSettings = field(default_factory=SolveSettings)
    hylomorphy: HylomorphySettings = field(default_factory=HylomorphySettings)
    evolve: EvolveSettings = field(default_factory=EvolveSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    deterministic: bool = False
    seed: int = 0
    log_level: str = 'INFO'
    log_file: Optional[str] = None
    source: Optional[Path] = None

    def build_grid(self) -> Grid:
        return build_grid(self.grid)

    def prepare_model(self, grid: Grid) -> Tuple[ModelSpec, float]:
        """
        Final model for a grid: optional normalization, coercivity weights
        estimated when not given, full validation.

        Returns:
            (model, omega shift from normalization)
        """
        spec = self.model
        omega_shift = 0.0
        if self.normalize:
            spec, omega_shift = normalize_quadratic_part(spec)
        if self.auto_coercivity:
            spec = resolve_coercivity(spec, grid)
        spec.validate(grid)
        return spec, omega_shift


def _parse_grid(data: Dict[str, Any], section: str) -> GridSpec:
    if 'dims' not in data:
        raise ConfigurationError(f"'{section}.dims' is required")
    spec = GridSpec.from_dict(data)
    spec.validate()
    return spec


def _parse_model(data: Dict[str, Any]) -> Tuple[ModelSpec, bool, bool]:
    if 'equation' not in data:
        raise ConfigurationError("'model.equation' is required")
    nl_data = _section(data, 'nonlinearity', NONLINEARITY_KEYS)
    if 'family' not in nl_data or 'exponent' not in nl_data:
        raise ConfigurationError("'model.nonlinearity' needs at least family and exponent")
    nonlinearity = Nonlinearity(
        family=str(nl_data['family']),
        exponent=_number(nl_data, 'exponent', None, 'model.nonlinearity'),
        coefficient=_number(nl_data, 'coefficient', 1.0, 'model.nonlinearity'),
        mass=_number(nl_data, 'mass', 0.0, 'model.nonlinearity'),
        quadratic=_number(nl_data, 'quadratic', 0.0, 'model.nonlinearity'),
        stabilizer_coefficient=_number(nl_data, 'stabilizer_coefficient', 0.0, 'model.nonlinearity'),
        stabilizer_exponent=_number(nl_data, 'stabilizer_exponent', 6.0, 'model.nonlinearity'),
    )

    potential = None
    if data.get('potential') is not None:
        pot_data = _section(data, 'potential', POTENTIAL_KEYS)
        matrix = pot_data.get('period_matrix')
        potential = Potential(
            family=str(pot_data.get('family', 'constant')),
            base=_number(pot_data, 'base', 1.0, 'model.potential'),
            amplitude=_number(pot_data, 'amplitude', 0.0, 'model.potential'),
            ceiling=_number(pot_data, 'ceiling', None, 'model.potential'),
            period_matrix=tuple(tuple(float(v) for v in row) for row in matrix) if matrix else None,
        )

    equation = str(data['equation'])
    auto = equation != 'NKG' and data.get('a', 'auto') == 'auto'
    spec = ModelSpec(
        equation=equation,
        nonlinearity=nonlinearity,
        potential=potential,
        winding=_number(data, 'winding', 0, 'model', int),
        a=0.0 if auto else _number(data, 'a', 0.0, 'model'),
        s=_number(data, 's', 2.0, 'model'),
        delta=_number(data, 'delta', 0.01, 'model'),
    )
    return spec, auto, bool(data.get('normalize', False))


def build_run_config(raw: Dict[str, Any], source: Optional[Path] = None) -> RunConfig:
    """
    Validate a raw configuration mapping.

    Args:
        raw: Mapping loaded from YAML
        source: File the mapping came from (resolves relative paths)

    Returns:
        RunConfig

    Raises:
        ConfigurationError: On unknown keys or invalid values
    """
    if not isinstance(raw, dict):
        raise ConfigurationError("Configuration must be a mapping")
    unknown = sorted(set(raw) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigurationError(f"Unknown top-level key(s): {', '.join(unknown)}")
    if 'grid' not in raw or 'model' not in raw:
        raise ConfigurationError("Configuration needs 'grid' and 'model' sections")

    grid_spec = _parse_grid(_section(raw, 'grid', GRID_KEYS), 'grid')
    model, auto, normalize = _parse_model(_section(raw, 'model', MODEL_KEYS))

    m = _section(raw, 'minimize', MINIMIZE_KEYS)
    deltas = m.get('continuation_deltas')
    minimize = MinimizeOptions(
        max_iters=_number(m, 'max_iters', 5000, 'minimize', int),
        tolerance=_number(m, 'tolerance', 1e-8, 'minimize'),
        residual_tolerance=_number(m, 'residual_tolerance', 1e-4, 'minimize'),
        step_rule=str(m.get('step_rule', 'barzilai-borwein-armijo')),
        initial_step=_number(m, 'initial_step', 1e-2, 'minimize'),
        rng_seed=_number(m, 'rng_seed', 0, 'minimize', int),
        continuation_deltas=[float(d) for d in deltas] if deltas else None,
        max_relative_change=_number(m, 'max_relative_change', 0.25, 'minimize'),
    )
    minimize.validate()
    solve = SolveSettings(
        init=str(m.get('init', 'auto')),
        init_parameter=_number(m, 'init_parameter', None, 'minimize'),
        constrained_check=bool(m.get('constrained_check', True)),
    )
    if solve.init not in INIT_KINDS and not solve.init.endswith('.snap'):
        raise ConfigurationError(
            f"'minimize.init' must be one of {INIT_KINDS} or a .snap path, got {solve.init!r}"
        )

    h = _section(raw, 'hylomorphy', HYLOMORPHY_KEYS)
    values = h.get('values')
    hylomorphy = HylomorphySettings(
        values=[float(v) for v in values] if values else None,
        s0=_number(h, 's0', 1.0, 'hylomorphy'),
    )
    if not hylomorphy.s0 > 0.0:
        raise ConfigurationError("'hylomorphy.s0' must be positive")

    e = _section(raw, 'evolve', EVOLVE_KEYS)
    lift = None
    if e.get('lift') is not None:
        lift = _parse_grid(_section(e, 'lift', LIFT_KEYS), 'evolve.lift')
    evolve = EvolveSettings(
        T=_number(e, 'T', 10.0, 'evolve'),
        dt=_number(e, 'dt', None, 'evolve'),
        sample_every=_number(e, 'sample_every', 10, 'evolve', int),
        reference=e.get('reference'),
        noise=_number(e, 'noise', 0.01, 'evolve'),
        scale=_number(e, 'scale', 1.0, 'evolve'),
        ensemble_size=_number(e, 'ensemble_size', 1, 'evolve', int),
        seed=_number(e, 'seed', 0, 'evolve', int),
        reversibility_steps=_number(e, 'reversibility_steps', 0, 'evolve', int),
        standing_wave_check=bool(e.get('standing_wave_check', True)),
        lift=lift,
    )
    if evolve.T < 0.0 or evolve.sample_every < 1 or evolve.ensemble_size < 1:
        raise ConfigurationError("'evolve' needs T >= 0, sample_every >= 1, ensemble_size >= 1")

    v = _section(raw, 'verify', VERIFY_KEYS)
    verify = VerifySettings(
        samples=_number(v, 'samples', 1000, 'verify', int),
        evolve_steps=_number(v, 'evolve_steps', 200, 'verify', int),
        dt=_number(v, 'dt', None, 'verify'),
    )

    o = _section(raw, 'output', OUTPUT_KEYS)
    output = OutputSettings(
        directory=str(o.get('directory', 'results')),
        profile_csv=bool(o.get('profile_csv', True)),
        snapshots=bool(o.get('snapshots', True)),
    )

    log_level = str(raw.get('log_level', 'INFO')).upper()
    if log_level not in LOG_LEVELS:
        raise ConfigurationError(f"'log_level' must be one of {LOG_LEVELS}, got {log_level!r}")

    config = RunConfig(
        grid=grid_spec,
        model=model,
        auto_coercivity=auto,
        normalize=normalize,
        minimize=minimize,
        solve=solve,
        hylomorphy=hylomorphy,
        evolve=evolve,
        verify=verify,
        output=output,
        deterministic=bool(raw.get('deterministic', False)),
        seed=_number(raw, 'seed', 0, 'seed', int),
        log_level=log_level,
        log_file=raw.get('log_file'),
        source=source,
    )
    _check_model_structure(config)
    _check_references(config)
    return config


def _check_model_structure(config: RunConfig):
    """Validate the model against the grid; estimated weights are checked later."""
    spec = config.model
    if config.normalize:
        spec, _ = normalize_quadratic_part(spec)
    if config.auto_coercivity:
        spec = replace(spec, a=1.0, s=max(spec.s, 2.0))
    spec.validate(Grid(config.grid))


def resolve_path(config: RunConfig, value: str) -> Path:
    path = Path(value)
    if not path.is_absolute() and config.source is not None:
        path = config.source.parent / path
    return path


def _check_references(config: RunConfig):
    paths = []
    if config.solve.init.endswith('.snap'):
        paths.append(config.solve.init)
    if config.evolve.reference:
        paths.append(config.evolve.reference)
    for value in paths:
        path = resolve_path(config, value)
        stem = path.name[:-len('.snap')] if path.name.endswith('.snap') else path.name
        candidates = [path.with_name(stem + '.snap'), path.with_name(stem + '_psi.snap')]
        if not any(c.exists() for c in candidates):
            raise ConfigurationError(f"Referenced snapshot not found: {path}")
