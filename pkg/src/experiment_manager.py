import asyncio
import json
import logging
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ConfigError, RslbaError
from src.geometry.lines import (line_motion_terms, orthonormal_to_plucker, plucker_to_orthonormal,
                                transform_line_to_camera, update_orthonormal)
from src.geometry.rs_camera import coefficient_matrix, curve_gradient, oriented_tangent, virtual_line_at_row
from src.models import (DegeneracyKind, GradcheckReport, InvalidPolicy, LineObservation,
                        ParameterSet, ResidualConfig, ResidualVariant, SolveReport, SolverMode,
                        SolverOptions, TrialResult)
from src.optim.degeneracy import degeneracy_probe, point_flatness, structure_flatness
from src.optim.jacobians import (apply_camera_delta, d_curvecoeffs_d_camera, d_curvecoeffs_d_linecam,
                                 d_linecam_d_pose, d_linew_d_tau, numeric_jacobian, relative_error,
                                 residual_jacobian)
from src.optim.problem import (BaProblem, ParameterLayout, assemble_jacobian, build_problem,
                               evaluate_residuals)
from src.optim.residuals import evaluate_rows, point_reprojection_residual
from src.optim.solvers import levenberg_marquardt
from src.run_config import RunConfig, build_run_config, config_dir
from src.synth.degeneracy_configs import collapsed_points, make_degeneracy_config
from src.synth.observations import ObservationSet, generate_observations, perturb_initialization
from src.synth.scene import make_cube_scene, random_line, scene_lines, select_lines
from src.synth.trajectory import make_trajectory, random_camera
from src.utils.metrics import evaluate, median_report
from src.utils.serialization import solution_parameters

logger = logging.getLogger(__name__)

# Sweep axes and the run-config key each one drives
SWEEP_AXES = {
    'noise': 'synth.noise_px',
    'points_per_line': 'synth.points_per_line',
    'num_lines': 'synth.num_lines',
    'lambda': 'residual.lambda',
    'variant': 'residual.variant',
}

DEFAULT_SWEEP_VALUES = {
    'noise': [0.1, 0.5, 1.0, 1.5, 2.0],
    'points_per_line': [2, 3, 4, 5, 6, 7, 8, 9, 10],
    'num_lines': [4, 5, 6, 7, 8, 9, 10, 11, 12],
    'lambda': [0.1, 1.0, 10.0],
    'variant': [ResidualVariant.E1_PERP_TANGENT.value, ResidualVariant.E2_HORIZ_TANGENT.value],
}

GRADCHECK_THRESHOLD = 1e-5


@dataclass
class Simulation:
    truth: ParameterSet
    initial: ParameterSet
    observations: ObservationSet
    scene: Any = None


@dataclass
class TrialJob:
    run: RunConfig
    experiment: str
    axis_value: Optional[Any] = None


@dataclass
class SweepResult:
    axis: str
    rows: List[Dict[str, Any]]
    trials: List[TrialResult] = field(default_factory=list)

    @property
    def failures(self) -> List[TrialResult]:
        return [trial for trial in self.trials if not trial.success]


def simulate(run: RunConfig) -> Simulation:
    """Scene, trajectory, observations and perturbed initial guess of one run"""
    synth = run.synth
    scene = make_cube_scene(side=synth.cube_side, center=synth.cube_center, seed=run.seed)
    if synth.num_lines is not None:
        scene = select_lines(scene, synth.num_lines, seed=run.seed)
    cameras = make_trajectory(synth.trajectory_spec(), scene)
    observations = generate_observations(scene, cameras, points_per_line=synth.points_per_line,
                                         noise_px=synth.noise_px,
                                         tangent_noise_rad=synth.tangent_noise_rad,
                                         seed=run.seed, noise_mode=synth.noise_mode)
    truth = ParameterSet(cameras=cameras, lines=scene_lines(scene))
    initial = perturb_initialization(truth, rot_deg=synth.perturb_rot_deg,
                                     trans_frac=synth.perturb_trans_frac,
                                     line_angle_deg=synth.perturb_line_deg,
                                     seed=run.seed + 1, gauge=run.solver.gauge())
    return Simulation(truth=truth, initial=initial, observations=observations, scene=scene)


def make_problem(run: RunConfig, params: ParameterSet, observations: Sequence[LineObservation]) -> BaProblem:
    return build_problem(params.cameras, params.lines, list(observations),
                         cfg=run.residual.residual_config(), gauge=run.solver.gauge(),
                         mode=run.solver.mode)


def solve(run: RunConfig, params: ParameterSet, observations: Sequence[LineObservation]) -> SolveReport:
    problem = make_problem(run, params, observations)
    return levenberg_marquardt(problem, run.solver.options(seed=run.seed))


def run_trial(run: RunConfig, experiment: str = 'trial', axis_value: Optional[Any] = None) -> TrialResult:
    """Simulate, solve and evaluate one seeded trial; failures are recorded, not raised"""
    result = TrialResult(experiment=experiment, method=run.solver.mode.value, seed=run.seed,
                         noise=run.synth.noise_px, axis_value=axis_value)
    start_time = time.time()
    try:
        sim = simulate(run)
        report = solve(run, sim.initial, sim.observations.observations)
        result.evaluation = evaluate(solution_parameters(report), sim.truth)
        result.final_cost = report.final_cost
        result.iterations = report.iterations
        result.solve_time = report.solve_time
    except RslbaError as e:
        result.errors.append(f"{type(e).__name__}: {e}")
        result.success = False
    except Exception as e:
        result.errors.append(f"unexpected error: {e}")
        result.success = False
    if not result.success:
        result.solve_time = time.time() - start_time
    return result


def _make_executor(max_workers: int) -> Executor:
    if max_workers > 1:
        return ProcessPoolExecutor(max_workers=max_workers)
    return ThreadPoolExecutor(max_workers=1)


def _random_observation(cam, line, rng: np.random.Generator, samples: int = 5,
                        noise_px: float = 0.5, tangent_noise_rad: float = 0.05) -> Optional[LineObservation]:
    """Noisy samples on the projected curve at random rows, in or out of the image"""
    c = coefficient_matrix(cam) @ line.vector
    q, s = [], []
    for v in rng.uniform(0.0, cam.height, samples):
        l1, l2, l3 = virtual_line_at_row(c, v)
        if abs(l1) <= 1e-6 * np.abs(c).max():
            continue
        u = -(l2 * v + l3) / l1
        du, dv = curve_gradient(c, u, v)
        if np.hypot(du, dv) <= 1e-9 * np.abs(c).max():
            continue
        tangent = oriented_tangent(du, dv)
        angle = rng.normal(scale=tangent_noise_rad)
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        q.append([u + rng.normal(scale=noise_px), v + rng.normal(scale=noise_px)])
        s.append(rot @ tangent)
    if len(q) < 2:
        return None
    return LineObservation(camera_id=0, line_id=0, q=q, s=s)


def gradcheck_blocks(cam, tau, obs: LineObservation, cfg: ResidualConfig) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """(analytic, numeric) pairs for every Jacobian block at one camera/line/observation"""
    Lw = orthonormal_to_plucker(tau)
    v = float(obs.q[0, 1])
    zeros_cam = np.zeros(12)
    blocks = {}

    blocks['linecam_pose'] = (
        d_linecam_d_pose(cam, Lw, v),
        numeric_jacobian(lambda x: transform_line_to_camera(Lw, apply_camera_delta(cam, x), v).vector, zeros_cam),
    )

    N0 = line_motion_terms(cam)[0]
    G = coefficient_matrix(cam)
    blocks['coeffs_linecam'] = (
        d_curvecoeffs_d_linecam(cam),
        numeric_jacobian(lambda x: G @ np.linalg.solve(N0, x), N0 @ Lw.vector),
    )
    blocks['coeffs_camera'] = (
        d_curvecoeffs_d_camera(cam, Lw),
        numeric_jacobian(lambda x: coefficient_matrix(apply_camera_delta(cam, x)) @ Lw.vector, zeros_cam),
    )
    blocks['linew_tau'] = (
        d_linew_d_tau(tau),
        numeric_jacobian(lambda x: orthonormal_to_plucker(update_orthonormal(tau, x)).vector, np.zeros(4)),
    )

    c = G @ Lw.vector
    _, _, dr_dc = evaluate_rows(c, obs, cfg, with_jacobian=True)
    blocks['residual_coeffs'] = (dr_dc, numeric_jacobian(lambda x: evaluate_rows(x, obs, cfg)[0], c))

    block = residual_jacobian(cam, tau, obs, cfg)
    blocks['residual_camera'] = (
        block.d_camera,
        numeric_jacobian(lambda x: evaluate_rows(coefficient_matrix(apply_camera_delta(cam, x)) @ Lw.vector,
                                                 obs, cfg)[0], zeros_cam),
    )
    blocks['residual_line'] = (
        block.d_line,
        numeric_jacobian(lambda x: evaluate_rows(G @ orthonormal_to_plucker(update_orthonormal(tau, x)).vector,
                                                 obs, cfg)[0], np.zeros(4)),
    )
    return blocks


def assembled_gradcheck(seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """(analytic, numeric) Jacobian of a small noisy cube problem over its free parameters"""
    run = build_run_config({'synth': {'n_cameras': 3, 'points_per_line': 3, 'noise_px': 0.5,
                                      'tangent_noise_rad': 0.02}}, overrides={'seed': seed})
    sim = simulate(run)
    problem = make_problem(run, sim.initial, sim.observations.observations)
    cameras, lines = problem.cameras, problem.lines
    layout = ParameterLayout(problem, cameras)
    _, _, J = assemble_jacobian(problem, cameras, lines, layout)
    numeric = numeric_jacobian(lambda x: evaluate_residuals(problem, *layout.apply(cameras, lines, x))[0],
                               np.zeros(layout.num_params))
    return J, numeric


def run_gradcheck(seed: int = 0, instances: int = 200, corrupt: Optional[str] = None,
                  threshold: float = GRADCHECK_THRESHOLD) -> GradcheckReport:
    """Compare every analytic block with central differences over random instances.

    ``corrupt`` names a block whose analytic value is deliberately scaled, to
    check that the comparison catches it.
    """
    rng = np.random.default_rng(seed)
    worst: Dict[str, float] = {}
    errors: List[str] = []
    variants = (ResidualVariant.E1_PERP_TANGENT, ResidualVariant.E2_HORIZ_TANGENT)

    def record(name: str, analytic: np.ndarray, numeric: np.ndarray) -> None:
        if name == corrupt:
            analytic = analytic * 1.01 + 1e-3
        worst[name] = max(worst.get(name, 0.0), relative_error(analytic, numeric))

    done = 0
    attempts = 0
    while done < instances and attempts < 20 * instances:
        attempts += 1
        cam = random_camera(rng)
        line = random_line(rng)
        obs = _random_observation(cam, line, rng)
        if obs is None:
            continue
        cfg = ResidualConfig(variant=variants[done % 2])
        _, valid, _ = evaluate_rows(coefficient_matrix(cam) @ line.vector, obs, cfg)
        if not valid.all():
            continue
        for name, (analytic, numeric) in gradcheck_blocks(cam, plucker_to_orthonormal(line), obs, cfg).items():
            record(name, analytic, numeric)
        done += 1
    if done < instances:
        errors.append(f"only {done} of {instances} random instances were usable")

    for index in range(max(1, instances // 100)):
        try:
            analytic, numeric = assembled_gradcheck(seed + index)
            record('assembled', analytic, numeric)
        except RslbaError as e:
            errors.append(f"assembled check {index}: {e}")

    report = GradcheckReport(worst=worst, instances=done, threshold=threshold, errors=errors)
    logger.info("gradient check over %d instances: %s", done, "passed" if report.passed else "failed")
    return report


def _solve_from(problem: BaProblem, params: ParameterSet, cfg: Optional[ResidualConfig] = None,
                seed: int = 0) -> SolveReport:
    problem = problem.with_state(params.cameras, params.lines)
    if cfg is not None:
        problem = problem.with_config(cfg=cfg)
    return levenberg_marquardt(problem, SolverOptions(seed=seed))


def _max_abs(values: np.ndarray) -> float:
    return float(np.abs(values).max(initial=0.0))


def run_degeneracy(kind: DegeneracyKind, seed: int = 0, solve_demo: bool = True) -> Dict[str, Any]:
    """Build a degenerate configuration and measure what each residual sees there"""
    config = make_degeneracy_config(kind)
    problem, degenerate, truth = config
    at_degenerate = problem.with_state(degenerate.cameras, degenerate.lines)
    distance_only = ResidualConfig(variant=ResidualVariant.PERP_ONLY)
    tangent_penalty = ResidualConfig(variant=ResidualVariant.E1_PERP_TANGENT,
                                     invalid_policy=InvalidPolicy.PENALTY)

    distance_r, _ = evaluate_residuals(at_degenerate.with_config(cfg=distance_only),
                                       degenerate.cameras, at_degenerate.lines)
    tangent_r, tangent_valid = evaluate_residuals(
        at_degenerate.with_config(cfg=ResidualConfig(variant=ResidualVariant.TANGENT_ONLY)),
        degenerate.cameras, at_degenerate.lines)
    probe = degeneracy_probe(at_degenerate)

    summary: Dict[str, Any] = {
        'kind': kind.value,
        'max_distance_residual': _max_abs(distance_r),
        'max_tangent_residual': _max_abs(tangent_r[tangent_valid]),
        'invalid_tangent_fraction': float(np.mean(~tangent_valid)) if len(tangent_valid) else 0.0,
        'truth_flatness': structure_flatness(truth.lines),
        'degenerate_flatness': structure_flatness(degenerate.lines),
    }
    summary.update({key: value for key, value in config.details.items() if key != 'view_ratios'})
    if 'view_ratios' in config.details:
        summary['first_view_ratios'] = config.details['view_ratios'][0]
        summary['second_view_ratios'] = config.details['view_ratios'][1]

    if kind == DegeneracyKind.XY_TRANSLATION:
        points = collapsed_points(config)
        point_residuals = [point_reprojection_residual(degenerate.cameras[obs.camera_id], X, q)
                           for obs, X, q in zip(_sample_owners(problem), points, _sample_pixels(problem))]
        summary['max_point_residual'] = _max_abs(np.array(point_residuals))
        summary['point_flatness'] = point_flatness(points)

    if solve_demo:
        distance_run = _solve_from(problem, degenerate, distance_only, seed)
        tangent_run = _solve_from(problem, degenerate, tangent_penalty, seed)
        summary['distance_only_final_flatness'] = structure_flatness(distance_run.lines)
        summary['tangent_final_flatness'] = structure_flatness(tangent_run.lines)
        summary['tangent_escapes'] = tangent_run.escapes
        summary['tangent_final_cost'] = tangent_run.final_cost

    return {'summary': summary, 'probe': probe}


def _sample_owners(problem: BaProblem) -> List[LineObservation]:
    return [obs for obs in problem.observations for _ in range(obs.num_samples)]


def _sample_pixels(problem: BaProblem) -> List[np.ndarray]:
    return [q for obs in problem.observations for q in obs.q]


class ExperimentManager:
    def __init__(self, config_dir_path: Optional[str] = None):
        self.config_dir = Path(config_dir_path) if config_dir_path else config_dir()
        self.settings = self._load_settings()
        self.experiments = self._load_experiments()

    def _load_settings(self) -> Dict:
        """Load solver / synth / output defaults"""
        settings_file = self.config_dir / "settings.json"
        try:
            with open(settings_file, 'r') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read {settings_file}: {e}") from e

    def _load_experiments(self) -> Dict:
        """Load named experiment presets"""
        experiments_file = self.config_dir / "experiments.json"
        if not experiments_file.exists():
            return {}
        try:
            with open(experiments_file, 'r') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read {experiments_file}: {e}") from e

    def get_available_experiments(self) -> Dict[str, str]:
        return {name: preset.get('description', '') for name, preset in self.experiments.items()}

    def build_run_config(self, experiment: Optional[str] = None, manifest: Optional[Dict[str, Any]] = None,
                         overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """settings.json, then the preset, then the manifest, then flags"""
        preset: Dict[str, Any] = {}
        if experiment is not None:
            if experiment not in self.experiments:
                raise ConfigError(f"unknown experiment '{experiment}'")
            preset = self.experiments[experiment].get('config', {})
        return build_run_config(self.settings, preset, manifest or {}, overrides=overrides)

    def sweep_values(self, axis: str, experiment: Optional[str] = None) -> List[Any]:
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis '{axis}', expected one of {sorted(SWEEP_AXES)}")
        preset = self.experiments.get(experiment, {}) if experiment else {}
        sweep = preset.get('sweep', {})
        if sweep.get('axis') == axis and sweep.get('values'):
            return list(sweep['values'])
        return list(DEFAULT_SWEEP_VALUES[axis])

    async def run_trials(self, jobs: List[TrialJob], max_workers: Optional[int] = None) -> List[TrialResult]:
        """Run trials concurrently; results keep the order of ``jobs``"""
        if max_workers is None:
            max_workers = self.settings.get('runtime', {}).get('max_workers', 4)

        semaphore = asyncio.Semaphore(max_workers)
        loop = asyncio.get_running_loop()
        executor = _make_executor(max_workers)

        async def run_single_trial(job: TrialJob) -> TrialResult:
            async with semaphore:
                return await loop.run_in_executor(executor, run_trial, job.run, job.experiment, job.axis_value)

        try:
            tasks = [run_single_trial(job) for job in jobs]
            results = await asyncio.gather(*tasks, return_exceptions=True)
        finally:
            executor.shutdown(wait=True)

        trial_results = []
        for job, result in zip(jobs, results):
            if isinstance(result, TrialResult):
                trial_results.append(result)
            else:
                logger.error("trial %s (seed %d) crashed: %s", job.experiment, job.run.seed, result)
                trial_results.append(TrialResult(experiment=job.experiment, method=job.run.solver.mode.value,
                                                 seed=job.run.seed, noise=job.run.synth.noise_px,
                                                 axis_value=job.axis_value, errors=[str(result)],
                                                 success=False))
        return trial_results

    async def run_sweep(self, axis: str, base: RunConfig, values: Optional[Sequence[Any]] = None,
                        trials: Optional[int] = None, methods: Sequence[SolverMode] = (SolverMode.RS,),
                        experiment: str = 'sweep', max_workers: Optional[int] = None,
                        progress: Optional[Callable[[str], None]] = None) -> SweepResult:
        """Median metrics over seeded trials for each value of one axis"""
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis '{axis}', expected one of {sorted(SWEEP_AXES)}")
        values = list(values) if values is not None else list(DEFAULT_SWEEP_VALUES[axis])
        trials = trials or base.runtime.trials
        max_workers = max_workers or base.runtime.max_workers
        base_data = base.model_dump(mode='json', by_alias=True)

        jobs: List[TrialJob] = []
        for value in values:
            for method in methods:
                for trial in range(trials):
                    run = build_run_config(base_data, overrides={
                        SWEEP_AXES[axis]: value,
                        'solver.mode': method.value,
                        'seed': base.seed + trial,
                    })
                    jobs.append(TrialJob(run=run, experiment=experiment, axis_value=value))

        if progress:
            progress(f"{len(jobs)} trials over {len(values)} {axis} values")
        results = await self.run_trials(jobs, max_workers)

        rows = []
        for value in values:
            for method in methods:
                group = [r for r in results if r.axis_value == value and r.method == method.value]
                succeeded = [r for r in group if r.success and r.evaluation is not None]
                medians = median_report([r.evaluation for r in succeeded])
                rows.append({
                    'experiment': experiment,
                    'axis': axis,
                    'value': value,
                    'method': method.value,
                    'noise': group[0].noise if group else float('nan'),
                    **medians,
                    'time': float(np.median([r.solve_time for r in succeeded])) if succeeded else float('nan'),
                    'failures': len(group) - len(succeeded),
                })
        return SweepResult(axis=axis, rows=rows, trials=results)
