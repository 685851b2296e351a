import numpy as np
import pytest

from src.experiment_manager import run_degeneracy
from src.geometry.rs_camera import coefficient_matrix
from src.models import DegeneracyKind, InvalidPolicy, PluckerLine, ResidualConfig, ResidualVariant
from src.optim.degeneracy import (COPLANARITY_COLLAPSE, FLATNESS_COLLAPSE, indeterminate_fraction,
                                  line_coplanarity, point_flatness, structure_flatness)
from src.optim.problem import evaluate_residuals
from src.optim.residuals import point_horizontal_residual, point_reprojection_residual
from src.synth.degeneracy_configs import (TWO_VIEW_BASELINE, collapsed_points, make_degeneracy_config,
                                          map_two_view_line)

DISTANCE_ONLY = ResidualConfig(variant=ResidualVariant.PERP_ONLY)
TANGENT_PENALTY = ResidualConfig(variant=ResidualVariant.E1_PERP_TANGENT, invalid_policy=InvalidPolicy.PENALTY)


def _at_degenerate(config, cfg):
    problem = config.problem.with_state(config.degenerate.cameras, config.degenerate.lines)
    return evaluate_residuals(problem.with_config(cfg=cfg), problem.cameras, problem.lines)


@pytest.fixture(scope="module")
def plane():
    return make_degeneracy_config(DegeneracyKind.PLANE)


@pytest.fixture(scope="module")
def xy():
    return make_degeneracy_config("xy_translation")


def test_plane_set_zeroes_distances_and_tangent_gradients(plane):
    r, _ = _at_degenerate(plane, DISTANCE_ONLY)
    assert np.abs(r).max() < 1e-10
    assert indeterminate_fraction(plane.problem, plane.degenerate.cameras, plane.degenerate.lines) >= 0.99


def test_plane_truth_is_not_flat(plane):
    assert structure_flatness(plane.truth.lines) > FLATNESS_COLLAPSE
    assert structure_flatness(plane.degenerate.lines) < 1e-9


def test_tangent_term_rejects_plane_set(plane):
    r_penalty, valid = _at_degenerate(plane, TANGENT_PENALTY)
    assert not valid.reshape(-1, 2)[:, 1].any()
    assert np.dot(r_penalty, r_penalty) > 1e2
    r_distance, _ = _at_degenerate(plane, DISTANCE_ONLY)
    assert np.dot(r_distance, r_distance) < 1e-12


def test_plane_probe_flags():
    summary = run_degeneracy(DegeneracyKind.PLANE, solve_demo=False)
    assert summary['summary']['max_distance_residual'] < 1e-10
    assert summary['summary']['invalid_tangent_fraction'] >= 0.99
    flags = summary['probe'].flags
    assert 'tangent_indeterminate' in flags
    assert 'flatness_collapse' in flags


@pytest.mark.slow
def test_tangent_solve_leaves_plane_set():
    summary = run_degeneracy(DegeneracyKind.PLANE)['summary']
    assert summary['distance_only_final_flatness'] < 0.01
    assert summary['tangent_escapes'] >= 1
    assert summary['tangent_final_flatness'] > 0.5


@pytest.mark.slow
def test_tangent_solve_leaves_xy_collapse():
    summary = run_degeneracy(DegeneracyKind.XY_TRANSLATION)['summary']
    assert summary['truth_flatness'] > 0.9
    assert summary['distance_only_final_flatness'] < 0.01
    assert summary['tangent_final_flatness'] > 0.5


def test_two_view_line_mapping():
    config = make_degeneracy_config(DegeneracyKind.TWO_VIEW_TRANSLATION)
    s, r = config.details['scale'], config.details['ratio']
    for line, mapped in zip(config.truth.lines, config.degenerate.lines):
        assert mapped.l14 == pytest.approx(line.l14 / (s * r), abs=1e-12)
        assert mapped.l12 == pytest.approx(line.l12 / s, abs=1e-12)

    first_truth, first_deg = config.truth.cameras[0], config.degenerate.cameras[0]
    for line, mapped in zip(config.truth.lines, config.degenerate.lines):
        c_truth = coefficient_matrix(first_truth) @ line.vector
        c_deg = coefficient_matrix(first_deg) @ mapped.vector
        assert np.allclose(c_deg, c_truth / s, rtol=0, atol=1e-10 * np.abs(c_truth).max())
    assert np.allclose(config.details['view_ratios'][0], 1.0 / s)


def test_coplanar_two_view_fits_both_views():
    config = make_degeneracy_config(DegeneracyKind.TWO_VIEW_TRANSLATION, coplanar=True)
    line = config.truth.lines[0]
    kappa = config.details['kappa']
    assert np.allclose(np.cross(TWO_VIEW_BASELINE, line.a), kappa * line.n, atol=1e-12)

    for cam, deg_cam in zip(config.truth.cameras, config.degenerate.cameras):
        c_truth = coefficient_matrix(cam) @ line.vector
        c_deg = coefficient_matrix(deg_cam) @ config.degenerate.lines[0].vector
        cosine = abs(np.dot(c_truth, c_deg)) / (np.linalg.norm(c_truth) * np.linalg.norm(c_deg))
        assert cosine == pytest.approx(1.0, abs=1e-10)
    r, _ = _at_degenerate(config, DISTANCE_ONLY)
    assert np.abs(r).max() < 1e-10


def test_mapped_line_stays_on_klein_quadric():
    config = make_degeneracy_config(DegeneracyKind.TWO_VIEW_TRANSLATION)
    for line in config.truth.lines:
        assert abs(map_two_view_line(line, 2.0, 1.5).klein()) < 1e-12


def test_xy_collapse(xy):
    lines = xy.degenerate.lines
    assert all(line.is_close(lines[0]) for line in lines)
    r, _ = _at_degenerate(xy, DISTANCE_ONLY)
    assert np.abs(r).max() < 1e-10

    points = collapsed_points(xy)
    owners = [obs for obs in xy.problem.observations for _ in range(obs.num_samples)]
    pixels = [q for obs in xy.problem.observations for q in obs.q]
    for obs, X, q in zip(owners, points, pixels):
        assert np.abs(point_reprojection_residual(xy.degenerate.cameras[obs.camera_id], X, q)).max() < 1e-9
        assert abs(point_horizontal_residual(xy.degenerate.cameras[obs.camera_id], X, q)) < 1e-9
    assert point_flatness(points) < 1e-9


def test_xy_cameras_stay_in_image_plane(xy):
    for cam in xy.degenerate.cameras:
        assert np.allclose(cam.omega, 0.0)
        assert cam.t0[1] == 0.0 and cam.t0[2] == 0.0
        assert cam.d[1] == pytest.approx(xy.details['depth_scale'])


def test_flatness_scores(rng):
    planar = np.column_stack([rng.normal(size=50), rng.normal(size=50), np.zeros(50)])
    assert point_flatness(planar) < 1e-12
    assert point_flatness(rng.normal(size=(50, 3))) > 0.3
    assert point_flatness([[1.0, 2.0, 3.0]]) == 0.0


def test_coplanarity_of_lines_in_a_plane(plane):
    assert line_coplanarity(plane.degenerate.lines) < 1e-9
    assert line_coplanarity(plane.truth.lines) > COPLANARITY_COLLAPSE


def test_flatness_ignores_world_similarity(plane):
    lines = plane.truth.lines
    shift = np.array([5.0, -2.0, 40.0])
    moved = [PluckerLine(n=3.0 * line.n + np.cross(shift, line.a), a=line.a) for line in lines]
    assert structure_flatness(lines) > 0.9
    assert structure_flatness(moved) == pytest.approx(structure_flatness(lines), rel=1e-6)


def test_cube_truth_is_round(xy):
    assert structure_flatness(xy.truth.lines) > 0.9
    assert structure_flatness(xy.degenerate.lines) == 0.0
