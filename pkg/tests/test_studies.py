import asyncio

import pytest

from src.experiment_manager import ExperimentManager

TRIALS = 15


@pytest.fixture
def manager(config_dir):
    return ExperimentManager(config_dir)


def _sweep(manager, experiment, axis, values, manifest=None):
    base = manager.build_run_config(experiment, manifest=manifest or {})
    result = asyncio.run(manager.run_sweep(axis, base, values=values, trials=TRIALS,
                                           experiment=experiment, max_workers=4))
    return {row['value']: row for row in result.rows}


@pytest.mark.slow
def test_noise_sweep_magnitude_and_order(manager):
    levels = [0.1, 0.5, 1.0, 1.5, 2.0]
    rows = _sweep(manager, 'noise_study', 'noise', levels)
    rot = [rows[level]['rot'] for level in levels]
    assert 8e-7 <= rot[0] <= 8e-5
    assert rot[-1] <= 2.7e-4
    drops = sum(1 for low, high in zip(rot, rot[1:]) if high < low)
    assert drops <= 1


@pytest.mark.slow
def test_perpendicular_beats_horizontal_distance(manager):
    rows = _sweep(manager, 'variant_study', 'variant', ['e1_perp_tangent', 'e2_horiz_tangent'],
                  manifest={'synth': {'noise_px': 0.5}})
    e1, e2 = rows['e1_perp_tangent'], rows['e2_horiz_tangent']
    assert e1['rot'] <= e2['rot']
    assert e1['trans'] <= e2['trans']


@pytest.mark.slow
def test_points_per_line_plateau(manager):
    rows = _sweep(manager, 'points_study', 'points_per_line', [6, 10])
    assert rows[6]['rot'] <= 2.0 * rows[10]['rot']


@pytest.mark.slow
def test_more_lines_help_then_stabilise(manager):
    rows = _sweep(manager, 'lines_study', 'num_lines', [4, 8, 12])
    assert rows[12]['rot'] < rows[4]['rot']
    assert rows[8]['rot'] <= 2.0 * rows[12]['rot']
