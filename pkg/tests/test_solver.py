import numpy as np
import pytest

from src.exceptions import ConfigError, DisconnectedGraph, MissingReference
from src.experiment_manager import make_problem, simulate
from src.geometry.lines import orthonormal_to_plucker, so3_exp
from src.models import (DegeneracyKind, GaugeSpec, LineObservation, ParameterSet, PluckerLine, ResidualConfig,
                        SolverMode, SolverOptions, Termination)
from src.optim.base_solver import solve_damped
from src.optim.degeneracy import degeneracy_probe, structure_flatness
from src.optim.problem import ParameterLayout, build_problem
from src.optim.solvers import (GsBaselineSolver, RsSolver, get_solver_class, levenberg_marquardt,
                               solve_gs_baseline)
from src.run_config import build_run_config
from src.synth.degeneracy_configs import make_degeneracy_config
from src.utils.metrics import evaluate
from src.utils.serialization import solution_parameters


def _rotate_world(params: ParameterSet, R_g: np.ndarray) -> ParameterSet:
    cameras = [cam.replace(R0=cam.R0 @ R_g.T) for cam in params.cameras]
    lines = [PluckerLine(n=R_g @ L.n, a=R_g @ L.a) for L in params.lines]
    return ParameterSet(cameras=cameras, lines=lines)


def _move_world(params: ParameterSet, scale: float = 1.0, shift=(0.0, 0.0, 0.0)) -> ParameterSet:
    """Parameters after the world map X -> scale * X + shift"""
    shift = np.asarray(shift, dtype=float)
    cameras = [cam.replace(t0=scale * cam.t0 - cam.R0 @ shift,
                           d=scale * cam.d - np.cross(cam.omega, cam.R0 @ shift))
               for cam in params.cameras]
    lines = [PluckerLine(n=scale * L.n + np.cross(shift, L.a), a=L.a) for L in params.lines]
    return ParameterSet(cameras=cameras, lines=lines)


WORLD_MOTIONS = {
    'rotation': lambda p: _rotate_world(p, so3_exp([0.3, -0.2, 0.5])),
    'translation': lambda p: _move_world(p, shift=(0.7, -0.4, 1.1)),
    'scale': lambda p: _move_world(p, scale=1.7),
    'similarity': lambda p: _move_world(_rotate_world(p, so3_exp([-0.1, 0.4, 0.2])), scale=0.6,
                                        shift=(-2.0, 0.5, 0.3)),
}


@pytest.fixture(scope="module")
def noisy_five_view():
    run = build_run_config({'synth': {'noise_px': 0.5, 'n_cameras': 5}}, overrides={'seed': 7})
    sim = simulate(run)
    base = levenberg_marquardt(make_problem(run, sim.initial, sim.observations.observations))
    return run, sim, base


def test_start_at_ground_truth(cube_problem):
    report = levenberg_marquardt(cube_problem)
    assert report.iterations <= 2
    assert report.final_cost < 1e-14
    assert report.termination in (Termination.GRADIENT_TOL, Termination.STEP_TOL)


def test_noiseless_cube_convergence(cube_run, cube_simulation):
    problem = make_problem(cube_run, cube_simulation.initial, cube_simulation.observations.observations)
    report = levenberg_marquardt(problem, cube_run.solver.options())
    assert report.final_cost < 1e-10
    assert report.initial_cost > report.final_cost
    assert np.all(np.diff(report.cost_trace) < 0)

    errors = evaluate(report, cube_simulation.truth)
    assert errors.rotation_median < 1e-6
    assert errors.line_dist_median < 1e-6
    assert errors.ate_max < 1e-6


def test_report_probe_on_healthy_solution(cube_problem):
    probe = degeneracy_probe(cube_problem)
    assert probe.indeterminate_fraction == 0.0
    assert 'flatness_collapse' not in probe.flags
    assert 'tangent_indeterminate' not in probe.flags


def test_gs_baseline_freezes_velocities(cube_run, cube_simulation):
    problem = make_problem(cube_run, cube_simulation.initial, cube_simulation.observations.observations)
    report = solve_gs_baseline(problem, SolverOptions(max_iter=20))
    assert report.method == SolverMode.GS_FROZEN.value
    assert all(cam.is_static for cam in report.cameras)
    # velocities carry real signal on a moving ring, so freezing them costs accuracy
    assert report.final_cost > 1e-6


def test_static_scene_rs_and_gs_agree():
    run = build_run_config({'synth': {'static': True}})
    sim = simulate(run)
    problem = make_problem(run, sim.initial, sim.observations.observations)
    rs = levenberg_marquardt(problem)
    gs = levenberg_marquardt(problem.with_config(mode=SolverMode.GS_FROZEN))
    assert rs.final_cost < 1e-10
    assert abs(rs.final_cost - gs.final_cost) < 1e-9


def test_solver_mapping():
    assert get_solver_class(SolverMode.RS) is RsSolver
    assert get_solver_class(SolverMode.GS_FROZEN) is GsBaselineSolver


def test_schur_step_matches_dense_step(rng):
    J = rng.standard_normal((60, 17))
    H, g = J.T @ J, J.T @ rng.standard_normal(60)
    dense = solve_damped(H, g, 1e-3, 1e-12, 6, [4, 4, 3], use_schur=False)
    schur = solve_damped(H, g, 1e-3, 1e-12, 6, [4, 4, 3], use_schur=True)
    assert np.allclose(dense, schur, atol=1e-10)


def test_schur_path_converges(cube_run, cube_simulation):
    problem = make_problem(cube_run, cube_simulation.initial, cube_simulation.observations.observations)
    report = levenberg_marquardt(problem, SolverOptions(schur_threshold=4))
    assert report.final_cost < 1e-10


@pytest.mark.parametrize("motion", sorted(WORLD_MOTIONS))
def test_noisy_solve_is_invariant_to_world_motion(noisy_five_view, motion):
    run, sim, base = noisy_five_view
    move = WORLD_MOTIONS[motion]
    moved = levenberg_marquardt(make_problem(run, move(sim.initial), sim.observations.observations))
    assert moved.final_cost == pytest.approx(base.final_cost, rel=1e-9, abs=1e-9)

    base_err = evaluate(base, sim.truth)
    moved_err = evaluate(moved, move(sim.truth))
    assert moved_err.rotation_median == pytest.approx(base_err.rotation_median, rel=1e-4, abs=1e-9)
    assert moved_err.line_dir_median == pytest.approx(base_err.line_dir_median, rel=1e-4, abs=1e-9)


def test_collapsed_lines_trigger_an_escape():
    config = make_degeneracy_config(DegeneracyKind.XY_TRANSLATION)
    solver = RsSolver(config.problem)
    all_valid = np.ones(config.problem.num_residuals, dtype=bool)
    assert solver._should_escape(all_valid, config.degenerate.lines, escapes=0)
    assert not solver._should_escape(all_valid, config.truth.lines, escapes=0)
    assert not solver._should_escape(all_valid, config.degenerate.lines,
                                     escapes=solver.options.max_escapes)


def test_reseed_lifts_lines_off_the_plane():
    config = make_degeneracy_config(DegeneracyKind.PLANE)
    problem = config.problem.with_state(config.degenerate.cameras, config.degenerate.lines)
    solver = RsSolver(problem)
    layout = ParameterLayout(problem, problem.cameras)
    cameras, lines = solver._reseed(layout, problem.cameras, problem.lines)
    assert all(cam.is_static for cam in cameras)
    assert structure_flatness(lines) > 0.5
    for seeded, true_line in zip(lines, config.truth.lines):
        cosine = abs(np.dot(orthonormal_to_plucker(seeded).unit_direction(), true_line.unit_direction()))
        assert cosine > np.cos(np.radians(10.0))


def test_solution_parameters_round_trip(cube_problem):
    report = levenberg_marquardt(cube_problem)
    params = solution_parameters(report)
    assert len(params.lines) == cube_problem.num_lines
    for solved, original in zip(params.lines, cube_problem.plucker_lines()):
        assert solved.is_close(original, atol=1e-8)


def _tiny_observation(cam_id, line_id):
    return LineObservation(camera_id=cam_id, line_id=line_id, q=[[100.0, 10.0], [110.0, 300.0]],
                           s=[[0.0, 1.0], [0.0, 1.0]])


def test_build_problem_validation(cube_simulation):
    cameras = cube_simulation.truth.cameras[:2]
    lines = cube_simulation.truth.lines[:2]
    with pytest.raises(MissingReference):
        build_problem(cameras, lines, [_tiny_observation(5, 0)])
    with pytest.raises(MissingReference):
        build_problem(cameras, lines, [_tiny_observation(0, 9)])
    with pytest.raises(DisconnectedGraph):
        build_problem(cameras, lines, [_tiny_observation(0, 0), _tiny_observation(1, 1)])
    with pytest.raises(ConfigError):
        build_problem(cameras, lines, [_tiny_observation(0, 0), _tiny_observation(1, 0),
                                       _tiny_observation(1, 1)], gauge=GaugeSpec(fixed_camera_ids=(4,)))


def test_under_constrained_lines_flagged(cube_simulation):
    cameras = cube_simulation.truth.cameras[:2]
    lines = cube_simulation.truth.lines[:2]
    problem = build_problem(cameras, lines, [_tiny_observation(0, 0), _tiny_observation(1, 0),
                                             _tiny_observation(1, 1)], cfg=ResidualConfig())
    assert problem.under_constrained == [1]
