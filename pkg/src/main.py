"""
Main Entry Point

CLI interface for the soliton workbench.
Runs the solve, evolve, verify and testfn workflows from a YAML
configuration file, with command-line overrides.
"""

import sys
import json
import time
import argparse
import logging
from pathlib import Path
from typing import Optional, Dict, Any, List

import numpy as np
import yaml

from .config import RunConfig, build_run_config, resolve_path
from .errors import NumericalError, WorkbenchError
from .evolve import (
    check_dt,
    default_dt,
    lift_vortex,
    perturb,
    reversibility_defect,
    run_ensemble,
    standing_wave_check,
    winding_number,
)
from .functionals import evaluate_all
from .grid import Grid, NKGState, aligned_distance, build_grid, set_deterministic
from .hylomorphy import HylomorphyReport, build_test_state, hylomorphy_check
from .minimize import (
    MinimizeReport,
    extract_multiplier,
    continuation,
    minimize_constrained,
    minimize_free,
)
from .model import ModelSpec, NSE, check_hylomorphy_hypothesis
from .snapshot import SnapshotWriter, load_field, load_state
from .utils import setup_logging, format_duration, to_jsonable
from .verify import PropertySuite

# Version info
__version__ = "1.0.0"

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INTERRUPTED = 130

WORKFLOWS = ('solve', 'evolve', 'verify', 'testfn')

# Free and constrained minimizers must agree this closely
CROSS_CHECK_ENERGY_GAP = 1e-6
CROSS_CHECK_DISTANCE = 1e-3
CROSS_CHECK_NOISE = 0.1


class WorkbenchRunner:
    """Runs one workflow for a validated configuration and writes its artifacts."""

    def __init__(
        self,
        config: RunConfig,
        output_dir: Optional[Path] = None,
        show_progress: bool = True
    ):
        """
        Initialize the runner.

        Args:
            config: Validated run configuration
            output_dir: Artifact directory (default: config.output.directory)
            show_progress: Show tqdm progress bars
        """
        self.config = config
        self.output_dir = Path(output_dir or config.output.directory)
        self.show_progress = show_progress
        self.grid: Optional[Grid] = None
        self.spec: Optional[ModelSpec] = None
        self.omega_shift = 0.0
        self.writer: Optional[SnapshotWriter] = None

        # Statistics
        self.stats = {
            "start_time": None,
            "end_time": None,
            "workflow": None,
            "grid_points": 0,
            "iterations": 0,
            "converged": None,
            "checks_passed": 0,
            "checks_failed": 0,
            "files_written": 0,
        }

    def _setup(self):
        set_deterministic(self.config.deterministic)
        self.grid = build_grid(self.config.grid)
        self.spec, self.omega_shift = self.config.prepare_model(self.grid)
        self.writer = SnapshotWriter(self.output_dir)
        self.stats["grid_points"] = self.grid.size
        logger.info(f"Model: {self.spec.equation} on a {self.grid.kind} grid {self.grid.shape}")
        if not self.spec.is_nkg:
            logger.info(f"Coercivity weights: a = {self.spec.a:.6g}, s = {self.spec.s:.6g}")

    def run(self, workflow: str) -> int:
        """
        Run a workflow.

        Args:
            workflow: One of solve, evolve, verify, testfn

        Returns:
            Exit code (0 success, 2 numerical failure)
        """
        self.stats["start_time"] = time.time()
        self.stats["workflow"] = workflow

        logger.info("=" * 60)
        logger.info(f"Soliton Workbench: {workflow}")
        logger.info("=" * 60)

        self._setup()
        handler = {
            'solve': self.solve,
            'evolve': self.evolve,
            'verify': self.verify,
            'testfn': self.testfn,
        }[workflow]
        try:
            code = handler()
        finally:
            self.stats["end_time"] = time.time()
            self.stats["files_written"] = self.writer.written_count if self.writer else 0
            self._print_summary()
        return code

    def _banner(self, title: str):
        logger.info("-" * 40)
        logger.info(title)
        logger.info("-" * 40)

    # --- solve ---------------------------------------------------------------

    def _hylomorphy_step(self) -> HylomorphyReport:
        self._banner("Step 1: Hylomorphy check")
        return hylomorphy_check(
            self.spec,
            self.grid,
            values=self.config.hylomorphy.values,
            s0=self.config.hylomorphy.s0,
            show_progress=self.show_progress,
        )

    def _initial_state(self, hylomorphy: HylomorphyReport):
        settings = self.config.solve
        if settings.init.endswith('.snap'):
            path = resolve_path(self.config, settings.init)
            if self.spec.is_nkg:
                return load_state(path.with_name(path.name[:-len('.snap')]), nkg=True)
            return load_field(path, grid=self.grid)

        if settings.init == 'gaussian':
            width = settings.init_parameter or 1.0
            center = self.grid.center()
            profile = self.grid.sample(
                lambda *xs: np.exp(-0.5 * sum((x - c) ** 2 for x, c in zip(xs, center)) / width ** 2)
            )
            if self.spec.is_nkg:
                return NKGState(profile, profile * (-0.5j))
            return profile

        parameter = settings.init_parameter or hylomorphy.best_parameter
        logger.info(f"Initial guess: test function at {hylomorphy.parameter_name} = {parameter:g}")
        return build_test_state(self.spec, self.grid, parameter, self.config.hylomorphy.s0)

    def _minimize_step(self, init, threshold: float) -> List[MinimizeReport]:
        self._banner("Step 2: Minimizing the penalised functional")
        opts = self.config.minimize
        opts.show_progress = self.show_progress
        if opts.continuation_deltas:
            return continuation(self.spec, init, opts.continuation_deltas, opts, threshold)
        return [minimize_free(self.spec, init, opts, threshold)]

    def _cross_check_step(self, free: MinimizeReport, init) -> Dict[str, Any]:
        """
        Minimize E at the charge of the free minimizer, starting from a
        seeded perturbation of the initial guess, and compare the two.
        """
        self._banner("Step 3: Constrained cross-check")
        opts = self.config.minimize
        target = evaluate_all(free.minimizer, self.spec).charge
        rng = np.random.default_rng(opts.rng_seed + 1)
        start = perturb(init, CROSS_CHECK_NOISE, rng, complex_values=False)
        constrained = minimize_constrained(self.spec, target, start, opts)
        energy_gap = abs(free.e_delta - constrained.e_delta) / max(abs(free.e_delta), 1e-300)
        distance = aligned_distance(constrained.minimizer, free.minimizer)
        passed = (
            constrained.converged
            and energy_gap <= CROSS_CHECK_ENERGY_GAP
            and distance <= CROSS_CHECK_DISTANCE
        )
        log = logger.info if passed else logger.error
        log(
            f"Cross-check {'passed' if passed else 'FAILED'}: energy gap {energy_gap:.3e} "
            f"(bound {CROSS_CHECK_ENERGY_GAP:g}), profile distance {distance:.3e} "
            f"(bound {CROSS_CHECK_DISTANCE:g})"
        )
        return {
            'constrained': constrained.to_dict(),
            'energy_gap': energy_gap,
            'energy_gap_bound': CROSS_CHECK_ENERGY_GAP,
            'profile_distance': distance,
            'profile_distance_bound': CROSS_CHECK_DISTANCE,
            'passed': passed,
        }

    def solve(self) -> int:
        hypothesis = check_hylomorphy_hypothesis(self.spec, self.grid)
        logger.info(
            f"Sufficient condition: {'holds' if hypothesis.holds else 'fails'} "
            f"(s0 = {hypothesis.s0:.4g}, margin = {hypothesis.margin:.4g})"
        )
        hylomorphy = self._hylomorphy_step()
        init = self._initial_state(hylomorphy)
        reports = self._minimize_step(init, hylomorphy.lambda0_proxy)
        final = reports[-1]
        self.stats["iterations"] = sum(r.iterations for r in reports)

        cross_check = None
        if self.config.solve.constrained_check:
            cross_check = self._cross_check_step(final, init)
        succeeded = final.converged and (cross_check is None or cross_check['passed'])
        self.stats["converged"] = succeeded

        self._banner("Step 4: Writing results")
        report = {
            'workflow': 'solve',
            'version': __version__,
            'model': self.spec.to_dict(),
            'grid': self.grid.to_dict(),
            'hypothesis': hypothesis.to_dict(),
            'hylomorphy': hylomorphy.to_dict(),
            'stages': [r.to_dict() for r in reports],
            'result': final.to_dict(),
            'omega_original': final.omega + self.omega_shift,
            'cross_check': cross_check,
        }
        self.writer.save_report(report)
        self.writer.save_table(final.trace_rows(), "trace.csv")
        self.writer.save_table(hylomorphy.sweep_rows(), "sweep.csv")
        if self.config.output.snapshots:
            self.writer.save_state(final.minimizer, "fields/minimizer")
        if self.config.output.profile_csv and self.grid.ndim == 1:
            component = final.minimizer.psi if isinstance(final.minimizer, NKGState) else final.minimizer
            self.writer.save_profile_csv(component, "profile")

        return EXIT_OK if succeeded else EXIT_NUMERICAL

    # --- evolve --------------------------------------------------------------

    def _reference_state(self):
        settings = self.config.evolve
        if settings.reference:
            path = resolve_path(self.config, settings.reference)
            logger.info(f"Loading reference from {path}")
            if self.spec.is_nkg:
                stem = path.name[:-len('.snap')] if path.name.endswith('.snap') else path.name
                return load_state(path.with_name(stem), nkg=True)
            return load_field(path, grid=self.grid)

        logger.info("No reference snapshot given; solving for one")
        hylomorphy = self._hylomorphy_step()
        init = self._initial_state(hylomorphy)
        report = self._minimize_step(init, hylomorphy.lambda0_proxy)[-1]
        if not report.converged:
            raise NumericalError(f"Reference minimization did not converge: {report.message}")
        return report.minimizer

    def evolve(self) -> int:
        settings = self.config.evolve
        reference = self._reference_state()
        spec = self.spec
        lifted = None

        if spec.is_vortex and settings.lift is not None:
            self._banner("Lifting the vortex profile")
            target = build_grid(settings.lift)
            omega = extract_multiplier(reference, spec).omega
            peak_radius = float(reference.grid.coords[0][int(np.argmax(np.max(np.abs(reference.values), axis=1)))])
            lifted = lift_vortex(reference, spec.winding, omega, target)
            spec = ModelSpec(
                equation=NSE,
                nonlinearity=spec.nonlinearity,
                potential=spec.potential,
                a=spec.a,
                s=spec.s,
                delta=spec.delta,
            )
            spec.validate(target)
            reference = lifted.psi

        grid = reference.grid
        dt = settings.dt or default_dt(grid, spec)
        check_dt(dt, grid, spec)
        self._banner(f"Evolving {settings.ensemble_size} trajectory(ies) to T = {settings.T:g}, dt = {dt:g}")
        reports = run_ensemble(
            reference, spec, settings.T, dt,
            count=settings.ensemble_size,
            amplitude=settings.noise,
            seed=settings.seed,
            sample_every=settings.sample_every,
            scale=settings.scale,
            show_progress=self.show_progress,
        )
        diverged = any(r.diverged for r in reports)

        summary: Dict[str, Any] = {
            'workflow': 'evolve',
            'version': __version__,
            'model': spec.to_dict(),
            'dt': dt,
            'T': settings.T,
            'members': [r.to_dict() for r in reports],
            'diverged': diverged,
        }
        if lifted is not None:
            summary['lift'] = {
                'm3': lifted.m3,
                'axis_defect': lifted.axis_defect,
                'winding': winding_number(lifted.psi, peak_radius),
            }
        if settings.standing_wave_check and not diverged:
            omega = extract_multiplier(reference, spec).omega
            summary['standing_wave'] = {
                'omega': omega,
                'max_deviation': standing_wave_check(reference, omega, settings.T, dt, spec,
                                                     settings.sample_every),
            }
        if settings.reversibility_steps > 0:
            summary['reversibility_defect'] = reversibility_defect(
                reference, settings.reversibility_steps, dt, spec
            )

        self._banner("Writing results")
        self.writer.save_report(summary)
        self.writer.save_table(reports[0].rows(), "series.csv")
        if self.config.output.snapshots and reports[0].final_state is not None:
            self.writer.save_state(reports[0].final_state, "fields/final")
        self.stats["converged"] = not diverged
        return EXIT_NUMERICAL if diverged else EXIT_OK

    # --- verify / testfn -----------------------------------------------------

    def verify(self) -> int:
        self._banner("Property checks")
        settings = self.config.verify
        suite = PropertySuite(
            self.spec, self.grid,
            samples=settings.samples,
            evolve_steps=settings.evolve_steps,
            dt=settings.dt,
            seed=self.config.seed,
            show_progress=self.show_progress,
        )
        results = suite.run()
        self.stats["checks_passed"] = suite.passed_count
        self.stats["checks_failed"] = suite.failed_count
        self.writer.save_report({
            'workflow': 'verify',
            'version': __version__,
            'model': self.spec.to_dict(),
            'checks': [r.to_dict() for r in results],
            'passed': suite.failed_count == 0,
        })
        return EXIT_OK if suite.failed_count == 0 else EXIT_NUMERICAL

    def testfn(self) -> int:
        report = self._hylomorphy_step()
        self.writer.save_report({
            'workflow': 'testfn',
            'version': __version__,
            'model': self.spec.to_dict(),
            'hylomorphy': report.to_dict(),
        })
        self.writer.save_table(report.sweep_rows(), "sweep.csv")
        return EXIT_OK

    def _print_summary(self):
        """Print final summary."""
        duration = (self.stats["end_time"] or time.time()) - (self.stats["start_time"] or time.time())

        logger.info("=" * 60)
        logger.info("SUMMARY")
        logger.info("=" * 60)
        logger.info(f"Workflow: {self.stats['workflow']}")
        logger.info(f"Duration: {format_duration(duration)}")
        logger.info(f"Grid points: {self.stats['grid_points']}")

        if self.stats["iterations"]:
            logger.info(f"Descent iterations: {self.stats['iterations']}")
        if self.stats["converged"] is not None:
            logger.info(f"Converged: {self.stats['converged']}")
        if self.stats["checks_passed"] or self.stats["checks_failed"]:
            logger.info(f"Checks passed: {self.stats['checks_passed']}")
            logger.info(f"Checks failed: {self.stats['checks_failed']}")

        logger.info(f"Files written: {self.stats['files_written']} in {self.output_dir}")
        logger.info("=" * 60)


def load_config_file(config_path: str) -> Dict[str, Any]:
    """
    Load configuration from a YAML file.

    Args:
        config_path: Path to the YAML configuration file

    Returns:
        Dictionary with configuration values
    """
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
        return config or {}
    except FileNotFoundError:
        raise FileNotFoundError(f"Configuration file not found: {config_path}")
    except yaml.YAMLError as e:
        raise ValueError(f"Invalid YAML in configuration file: {e}")


def merge_args_with_config(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Merge command-line arguments into the config mapping.
    Command-line arguments take precedence.

    Args:
        args: Parsed command-line arguments
        config: Configuration dictionary from file

    Returns:
        Merged configuration dictionary
    """
    # Mapping from argparse attribute names to config file locations
    arg_mapping = {
        'out': ('output', 'directory'),
        'seed': ('seed',),
        'max_iters': ('minimize', 'max_iters'),
        'tol': ('minimize', 'tolerance'),
        'log_level': ('log_level',),
        'log_file': ('log_file',),
    }

    merged = dict(config)
    for arg_key, location in arg_mapping.items():
        value = getattr(args, arg_key, None)
        if value is None:
            continue
        target = merged
        for key in location[:-1]:
            target[key] = dict(target.get(key) or {})
            target = target[key]
        target[location[-1]] = value

    # Flags only ever switch on
    if getattr(args, 'deterministic', False):
        merged['deterministic'] = True

    return merged


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        description="Find and check hylomorphic solitons and vortices of NSE and NKG models",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Solve for a 1-D cubic Schroedinger soliton
  soliton-workbench solve --config config/nse1d-cubic.yaml --out results/nse1d

  # Monitor orbital stability of the solution
  soliton-workbench evolve --config config/nse1d-cubic.yaml --out results/nse1d-evolve

  # Run the property checks deterministically
  soliton-workbench verify --config config/nkg1d-cubic.yaml --deterministic

  # Sweep the vortex test functions only
  soliton-workbench testfn --config config/vortex.yaml --out results/vortex-testfn

See docs/CONFIGURATION.md for every configuration key.
        """
    )

    parser.add_argument(
        '--version', '-v',
        action='version',
        version=f'%(prog)s {__version__}'
    )

    parser.add_argument(
        'workflow',
        choices=WORKFLOWS,
        help='Workflow to run'
    )

    parser.add_argument(
        '--config', '-c',
        type=str,
        required=True,
        help='Path to YAML configuration file'
    )

    parser.add_argument(
        '--out', '-o',
        type=str,
        default=None,
        help='Output directory (overrides output.directory)'
    )

    parser.add_argument(
        '--deterministic',
        action='store_true',
        help='Use fixed-order reductions for bit-reproducible results'
    )

    parser.add_argument(
        '--seed',
        type=int,
        default=None,
        help='Random seed for sampled checks'
    )

    parser.add_argument(
        '--max-iters',
        type=int,
        default=None,
        help='Descent iteration cap (overrides minimize.max_iters)'
    )

    parser.add_argument(
        '--tol',
        type=float,
        default=None,
        help='Relative gradient tolerance (overrides minimize.tolerance)'
    )

    parser.add_argument(
        '--no-progress',
        action='store_true',
        help='Hide progress bars'
    )

    parser.add_argument(
        '--log-level', '-l',
        type=str,
        default=None,
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Logging level (default: INFO)'
    )

    parser.add_argument(
        '--log-file',
        type=str,
        default=None,
        help='Log file path'
    )

    return parser.parse_args(argv)


def _report_error(kind: str, error: Exception):
    print(json.dumps(to_jsonable({
        'error': kind,
        'message': str(error),
        'trace': getattr(error, 'trace', None),
    })), file=sys.stderr)


def run_workflow(workflow: str, config: RunConfig, output_dir: Optional[Path] = None,
                 show_progress: bool = True) -> int:
    """
    Convenience function to run one workflow.

    Returns:
        Exit code
    """
    runner = WorkbenchRunner(config, output_dir, show_progress=show_progress)
    return runner.run(workflow)


def main(argv: Optional[List[str]] = None):
    """Main entry point."""
    args = parse_args(argv)

    try:
        raw = load_config_file(args.config)
        raw = merge_args_with_config(args, raw)
        config = build_run_config(raw, source=Path(args.config))
    except (FileNotFoundError, ValueError, WorkbenchError) as e:
        _report_error("configuration", e)
        sys.exit(EXIT_CONFIG)

    # Setup logging
    setup_logging(
        level=config.log_level,
        log_file=config.log_file
    )

    logger.info(f"Soliton Workbench v{__version__}")

    try:
        code = run_workflow(args.workflow, config, show_progress=not args.no_progress)
    except KeyboardInterrupt:
        logger.info("\nOperation cancelled by user")
        sys.exit(EXIT_INTERRUPTED)
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        _report_error("numerical", e)
        sys.exit(EXIT_NUMERICAL)
    except WorkbenchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        _report_error(type(e).__name__, e)
        sys.exit(EXIT_CONFIG)
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        if config.log_level == 'DEBUG':
            import traceback
            traceback.print_exc()
        _report_error("unexpected", e)
        sys.exit(EXIT_CONFIG)

    sys.exit(code)


if __name__ == "__main__":
    main()
