#!/usr/bin/env python3
"""
Rolling-Shutter Line Bundle Adjustment - CLI Tool

Simulates rolling-shutter views of line scenes, refines cameras, per-frame
velocities and 3D lines against the projected curves, evaluates the result,
checks Jacobians, and reproduces degeneracy and sweep studies.
"""

import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from colorama import Fore, Style, init

from src.exceptions import ConfigError, NumericalFailure, RslbaError
from src.experiment_manager import (SWEEP_AXES, ExperimentManager, make_problem, run_degeneracy,
                                    run_gradcheck, simulate)
from src.models import DegeneracyKind, ParameterSet, SolverMode
from src.optim.solvers import levenberg_marquardt
from src.synth.observations import perturb_initialization
from src.synth.scene import scene_lines
from src.utils.metrics import evaluate, median_report
from src.utils.output_formatter import TABLE_COLUMNS, OutputFormatter
from src.utils.serialization import (load_cameras, load_observations, load_parameters, load_scene,
                                     read_json, save_cameras, save_observations, save_parameters,
                                     save_scene, solution_parameters, write_csv, write_json, write_tum)

# Initialize colorama
init()

EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

DEGENERACY_ALIASES = {
    'plane': DegeneracyKind.PLANE,
    'two_view': DegeneracyKind.TWO_VIEW_TRANSLATION,
    'two_view_translation': DegeneracyKind.TWO_VIEW_TRANSLATION,
    'xy': DegeneracyKind.XY_TRANSLATION,
    'xy_translation': DegeneracyKind.XY_TRANSLATION,
}


def _fail(ctx: click.Context, message: str, code: int = EXIT_USAGE) -> None:
    click.echo(f"{Fore.RED}❌ {message}{Style.RESET_ALL}", err=True)
    ctx.exit(code)


def _manager(ctx: click.Context) -> ExperimentManager:
    try:
        return ExperimentManager(ctx.obj.get('config_dir'))
    except ConfigError as e:
        _fail(ctx, str(e))


def _load_run(ctx: click.Context, config_path: Optional[str], experiment: Optional[str] = None,
              overrides: Optional[Dict[str, Any]] = None):
    manager = _manager(ctx)
    manifest = {}
    if config_path:
        try:
            manifest = read_json(config_path)
        except (OSError, ValueError) as e:
            _fail(ctx, f"cannot read config '{config_path}': {e}")
    try:
        run = manager.build_run_config(experiment, manifest, overrides)
    except ConfigError as e:
        _fail(ctx, f"invalid configuration: {e}")
    if not ctx.obj.get('verbose'):
        logging.getLogger('src').setLevel(run.runtime.log_level)
    return manager, run


@click.group()
@click.version_option(version="0.1.0")
@click.option('--verbose', '-v', is_flag=True, default=False, help='Log solver iterations')
@click.option('--config-dir', default=None, help='Configuration directory path (or RSLBA_CONFIG_DIR)')
@click.pass_context
def cli(ctx, verbose, config_dir):
    """📐 Rolling-shutter line bundle adjustment"""
    ctx.ensure_object(dict)
    ctx.obj['config_dir'] = config_dir
    ctx.obj['verbose'] = verbose
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command('list-experiments')
@click.pass_context
def list_experiments(ctx):
    """📋 List the configured experiment presets"""
    manager = _manager(ctx)
    click.echo(f"\n{Fore.CYAN}🧪 Available experiments:{Style.RESET_ALL}")
    for name, description in sorted(manager.get_available_experiments().items()):
        click.echo(f"  • {Fore.YELLOW}{name}{Style.RESET_ALL}: {description}")


@cli.command('simulate')
@click.option('--config', 'config_path', type=click.Path(), help='JSON run manifest')
@click.option('--experiment', '-e', help='Named preset from experiments.json')
@click.option('--out', 'out_dir', type=click.Path(), help='Output directory')
@click.option('--seed', type=int)
@click.option('--noise', type=float, help='Pixel noise sigma')
@click.option('--points-per-line', '-p', type=int)
@click.option('--cameras', type=int, help='Number of cameras')
@click.option('--lines', type=int, help='Number of cube edges to keep')
@click.pass_context
def simulate_cmd(ctx, config_path, experiment, out_dir, seed, noise, points_per_line, cameras, lines):
    """🎲 Simulate a scene, trajectory and curve observations"""
    manager, run = _load_run(ctx, config_path, experiment, {
        'seed': seed, 'synth.noise_px': noise, 'synth.points_per_line': points_per_line,
        'synth.n_cameras': cameras, 'synth.num_lines': lines,
    })
    out = Path(out_dir or run.output.output_directory)
    try:
        sim = simulate(run)
    except RslbaError as e:
        _fail(ctx, f"simulation failed: {e}")

    try:
        save_scene(out / 'scene.json', sim.scene)
        save_cameras(out / 'cameras.json', sim.truth.cameras)
        save_observations(out / 'observations.json', sim.observations.observations)
        save_parameters(out / 'initial.json', sim.initial)
        write_json(out / 'run.json', run.model_dump(mode='json', by_alias=True))
    except OSError as e:
        _fail(ctx, f"cannot write outputs: {e}")

    click.echo(f"{Fore.GREEN}✅ Simulated {sim.scene.num_lines} lines, {len(sim.truth.cameras)} cameras, "
               f"{sim.observations.num_samples} samples ({len(sim.observations.dropped)} pairs dropped)"
               f"{Style.RESET_ALL}")
    click.echo(f"💾 Written to: {out}")


@cli.command('solve')
@click.option('--input', 'input_dir', required=True, type=click.Path(), help='Directory written by simulate')
@click.option('--config', 'config_path', type=click.Path(), help='JSON run manifest')
@click.option('--out', 'out_dir', type=click.Path(), help='Output directory (default: input)')
@click.option('--mode', type=click.Choice([m.value for m in SolverMode]))
@click.option('--variant', type=click.Choice(['e1_perp_tangent', 'e2_horiz_tangent', 'perp_only',
                                               'horiz_only', 'tangent_only']))
@click.option('--lambda', 'lam', type=float, help='Tangent weight')
@click.option('--max-iter', type=int)
@click.pass_context
def solve_cmd(ctx, input_dir, config_path, out_dir, mode, variant, lam, max_iter):
    """🚀 Refine cameras, velocities and lines"""
    manager, run = _load_run(ctx, config_path, None, {
        'solver.mode': mode, 'residual.variant': variant, 'residual.lambda': lam,
        'solver.max_iter': max_iter,
    })
    src_dir = Path(input_dir)
    try:
        observations = load_observations(src_dir / 'observations.json')
        if (src_dir / 'initial.json').exists():
            initial = load_parameters(src_dir / 'initial.json')
        else:
            truth = ParameterSet(cameras=load_cameras(src_dir / 'cameras.json'),
                                 lines=scene_lines(load_scene(src_dir / 'scene.json')))
            initial = perturb_initialization(truth, run.synth.perturb_rot_deg, run.synth.perturb_trans_frac,
                                             run.synth.perturb_line_deg, seed=run.seed + 1,
                                             gauge=run.solver.gauge())
    except (OSError, KeyError, ValueError) as e:
        _fail(ctx, f"cannot read inputs from '{input_dir}': {e}")

    formatter = OutputFormatter(run.output.model_dump())
    click.echo(f"{Fore.CYAN}⏳ Solving {len(observations)} observations ({run.solver.mode.value})...{Style.RESET_ALL}")
    try:
        problem = make_problem(run, initial, observations)
        report = levenberg_marquardt(problem, run.solver.options(seed=run.seed))
    except NumericalFailure as e:
        _fail(ctx, f"solver failed: {e}", EXIT_CHECK_FAILED)
    except RslbaError as e:
        _fail(ctx, f"invalid problem: {e}")

    out = Path(out_dir or input_dir)
    save_parameters(out / 'solution.json', solution_parameters(report))
    write_json(out / 'report.json', report.to_dict())
    write_tum(out / 'trajectory.tum', report.cameras)
    formatter.print_solve_summary(report)
    click.echo(f"{Fore.GREEN}💾 Results saved to: {out}{Style.RESET_ALL}")


@cli.command('eval')
@click.option('--solution', required=True, type=click.Path(),
              help='solution.json, or a directory of trial subdirectories')
@click.option('--ground-truth', 'truth_dir', required=True, type=click.Path(),
              help='Directory with scene.json and cameras.json')
@click.option('--noise', type=float, default=None, help='Noise level for the table row')
@click.option('--out', 'out_dir', type=click.Path(), help='Output directory')
@click.option('--no-scale', is_flag=True, default=False, help='Align trajectories without scale')
@click.pass_context
def eval_cmd(ctx, solution, truth_dir, noise, out_dir, no_scale):
    """📊 Compare a solution with the ground truth"""
    truth_path = Path(truth_dir)
    try:
        truth = ParameterSet(cameras=load_cameras(truth_path / 'cameras.json'),
                             lines=scene_lines(load_scene(truth_path / 'scene.json')))
        solution_path = Path(solution)
        if solution_path.is_dir():
            files = sorted(solution_path.glob('*/solution.json'))
            if not files:
                _fail(ctx, f"no trial solutions under '{solution}'")
            estimates = [load_parameters(path) for path in files]
        else:
            estimates = [load_parameters(solution_path)]
    except (OSError, KeyError, ValueError) as e:
        _fail(ctx, f"cannot read inputs: {e}")

    try:
        reports = [evaluate(estimate, truth, with_scale=not no_scale) for estimate in estimates]
    except RslbaError as e:
        _fail(ctx, f"evaluation failed: {e}")

    if out_dir is None:
        out_dir = solution if Path(solution).is_dir() else Path(solution).parent
    out = Path(out_dir)
    formatter = OutputFormatter({'output_directory': str(out)})
    if len(reports) == 1:
        formatter.print_eval(reports[0], noise)
        write_json(out / 'eval.json', reports[0].to_dict())
        rows = [formatter.table_row(reports[0], noise)]
    else:
        medians = median_report(reports)
        write_json(out / 'eval.json', {'trials': [r.to_dict() for r in reports], 'median': medians})
        rows = [[noise if noise is not None else float('nan')] + [medians[col] for col in TABLE_COLUMNS[1:]]]
        click.echo(f"📊 Medians over {len(reports)} trials: " +
                   ", ".join(f"{col} {medians[col]:.3e}" for col in TABLE_COLUMNS[1:]))
    write_csv(out / 'table.csv', TABLE_COLUMNS, rows)
    click.echo(f"{Fore.GREEN}💾 Evaluation saved to: {out}{Style.RESET_ALL}")


@cli.command('gradcheck')
@click.option('--seed', type=int, default=0)
@click.option('--instances', '-n', type=int, default=200, help='Random instances per block')
@click.option('--corrupt', default=None, hidden=True, help='Block to corrupt (self-test)')
@click.option('--out', 'out_file', type=click.Path(), help='Write the report as JSON')
@click.pass_context
def gradcheck_cmd(ctx, seed, instances, corrupt, out_file):
    """🧪 Check analytic Jacobians against finite differences"""
    click.echo(f"{Fore.CYAN}🧪 Checking Jacobians over {instances} instances...{Style.RESET_ALL}")
    report = run_gradcheck(seed=seed, instances=instances, corrupt=corrupt)
    OutputFormatter({}).print_gradcheck(report)
    if out_file:
        write_json(out_file, report.to_dict())
    if not report.passed:
        _fail(ctx, f"gradient check failed for: {', '.join(report.failed_blocks) or 'setup'}",
              EXIT_CHECK_FAILED)
    click.echo(f"{Fore.GREEN}✅ All Jacobian blocks match{Style.RESET_ALL}")


@cli.command('degeneracy')
@click.argument('kind', type=click.Choice(sorted(DEGENERACY_ALIASES)))
@click.option('--seed', type=int, default=0)
@click.option('--no-solve', is_flag=True, default=False, help='Skip the solves started at the degenerate set')
@click.option('--out', 'out_file', type=click.Path(), help='Write the summary as JSON')
@click.pass_context
def degeneracy_cmd(ctx, kind, seed, no_solve, out_file):
    """🌀 Build a degenerate configuration and probe it"""
    try:
        result = run_degeneracy(DEGENERACY_ALIASES[kind], seed=seed, solve_demo=not no_solve)
    except RslbaError as e:
        _fail(ctx, f"degeneracy demo failed: {e}", EXIT_CHECK_FAILED)
    OutputFormatter({}).print_degeneracy(result)
    if out_file:
        write_json(out_file, {'summary': result['summary'], 'probe': result['probe'].to_dict()})


def _parse_values(raw: Optional[str]) -> Optional[List[Any]]:
    if not raw:
        return None
    values = []
    for item in raw.split(','):
        item = item.strip()
        try:
            number = float(item)
            values.append(int(number) if number.is_integer() and '.' not in item else number)
        except ValueError:
            values.append(item)
    return values


@cli.command('sweep')
@click.option('--axis', '-a', required=True, type=click.Choice(sorted(SWEEP_AXES)))
@click.option('--config', 'config_path', type=click.Path(), help='JSON run manifest')
@click.option('--experiment', '-e', help='Named preset from experiments.json')
@click.option('--values', help='Comma-separated axis values (default: the standard grid)')
@click.option('--trials', '-n', type=int, help='Trials per axis value')
@click.option('--methods', '-m', multiple=True, type=click.Choice([m.value for m in SolverMode]),
              help='Solver modes to compare')
@click.option('--max-workers', '-j', type=int, help='Concurrent trials')
@click.option('--seed', type=int)
@click.option('--out', 'out_file', type=click.Path(), help='CSV path (default: <output>/sweep.csv)')
@click.pass_context
def sweep_cmd(ctx, axis, config_path, experiment, values, trials, methods, max_workers, seed, out_file):
    """📈 Median accuracy over seeded trials along one axis"""
    manager, run = _load_run(ctx, config_path, experiment, {
        'runtime.trials': trials, 'runtime.max_workers': max_workers, 'seed': seed,
    })
    grid = _parse_values(values) or manager.sweep_values(axis, experiment)
    modes = [SolverMode(m) for m in methods] or [run.solver.mode]
    click.echo(f"{Fore.CYAN}📈 Sweeping {axis} over {grid} "
               f"({run.runtime.trials} trials each, {run.runtime.max_workers} workers){Style.RESET_ALL}")
    try:
        result = asyncio.run(manager.run_sweep(axis, run, values=grid, methods=modes,
                                               experiment=experiment or 'sweep', progress=click.echo))
    except KeyboardInterrupt:
        click.echo(f"\n{Fore.YELLOW}⏹️  Sweep interrupted by user{Style.RESET_ALL}")
        ctx.exit(EXIT_CHECK_FAILED)
    except ConfigError as e:
        _fail(ctx, f"invalid sweep: {e}")

    formatter = OutputFormatter(run.output.model_dump())
    formatter.print_sweep(result.rows)
    path = formatter.save_sweep(result.rows, out_file or str(Path(run.output.output_directory) / 'sweep.csv'))
    click.echo(f"{Fore.GREEN}💾 Sweep saved to: {path}{Style.RESET_ALL}")


if __name__ == '__main__':
    cli(obj={})
