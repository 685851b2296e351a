import json

import numpy as np
import pytest

from src.experiment_manager import simulate
from src.models import LineObservation
from src.run_config import build_run_config
from src.utils.serialization import (load_cameras, load_observations, load_parameters, read_json,
                                     read_tum, save_cameras, save_observations, save_parameters,
                                     tum_rows, write_csv, write_json, write_tum)


def test_json_floats_round_trip_exactly(tmp_path):
    values = [0.1, 1 / 3, 1e-300, 2.0 ** -1074, 123456789.123456789, -0.0]
    path = write_json(tmp_path / 'nested' / 'values.json', {'values': values})
    assert read_json(path)['values'] == values
    assert open(path).read().endswith('}\n')


def test_cameras_round_trip(tmp_path, cube_simulation):
    cameras = cube_simulation.truth.cameras
    loaded = load_cameras(save_cameras(tmp_path / 'cameras.json', cameras))
    for cam, back in zip(cameras, loaded):
        assert np.array_equal(cam.R0, back.R0)
        assert np.array_equal(cam.t0, back.t0)
        assert np.array_equal(cam.omega, back.omega)
        assert np.array_equal(cam.d, back.d)
        assert (cam.height, cam.width) == (back.height, back.width)


def test_camera_json_layout(tmp_path, cube_simulation):
    save_cameras(tmp_path / 'cameras.json', cube_simulation.truth.cameras[:1])
    item = read_json(tmp_path / 'cameras.json')['cameras'][0]
    assert sorted(item) == ['K', 'R0', 'd', 'h', 'omega', 't0', 'w']
    assert len(item['K']) == 9 and len(item['R0']) == 9


def test_observations_round_trip(tmp_path, cube_simulation):
    observations = cube_simulation.observations.observations
    loaded = load_observations(save_observations(tmp_path / 'obs.json', observations))
    assert len(loaded) == len(observations)
    for obs, back in zip(observations, loaded):
        assert (obs.camera_id, obs.line_id) == (back.camera_id, back.line_id)
        assert np.array_equal(obs.q, back.q)
        assert np.array_equal(obs.s, back.s)


def test_parameters_round_trip(tmp_path, cube_simulation):
    truth = cube_simulation.truth
    loaded = load_parameters(save_parameters(tmp_path / 'truth.json', truth))
    for line, back in zip(truth.lines, loaded.lines):
        assert np.array_equal(line.vector, back.vector)


def test_tum_rows(tmp_path, cube_simulation):
    cameras = cube_simulation.truth.cameras
    rows = tum_rows(cameras)
    assert [row[0] for row in rows] == list(range(len(cameras)))
    centers, rotations = read_tum(write_tum(tmp_path / 'trajectory.tum', cameras))
    for cam, center, R in zip(cameras, centers, rotations):
        assert np.allclose(center, cam.center, atol=1e-12)
        assert np.allclose(R, cam.R0.T, atol=1e-12)
    first = open(tmp_path / 'trajectory.tum').readline().split()
    assert len(first) == 8 and first[0] == '0'


def test_csv_layout(tmp_path):
    path = write_csv(tmp_path / 'table.csv', ['noise', 'rot'], [[0.5, 0.1], [1.0, 'n/a']])
    with open(path, 'rb') as f:
        content = f.read()
    assert content == b'noise,rot\n0.5,0.1\n1.0,n/a\n'


@pytest.mark.parametrize('noise', [0.0, 1.0])
def test_seeded_outputs_are_byte_identical(tmp_path, noise):
    run = build_run_config({'seed': 11, 'synth': {'noise_px': noise, 'tangent_noise_rad': 0.01}})
    contents = []
    for attempt in range(2):
        sim = simulate(run)
        path = save_observations(tmp_path / f'obs_{attempt}.json', sim.observations)
        save_parameters(tmp_path / f'initial_{attempt}.json', sim.initial)
        contents.append((open(path, 'rb').read(), open(tmp_path / f'initial_{attempt}.json', 'rb').read()))
    assert contents[0] == contents[1]
    assert json.loads(contents[0][0])['observations']


def test_missing_tangent_survives_round_trip(tmp_path):
    obs = LineObservation(camera_id=1, line_id=2, q=[[1.0, 2.0], [3.0, 4.0]], s=[[0.0, 1.0], [0.0, 0.0]],
                          has_tangent=[True, False])
    path = save_observations(tmp_path / 'obs.json', [obs])
    samples = read_json(path)['observations'][0]['samples']
    assert 'has_tangent' not in samples[0]
    assert samples[1]['has_tangent'] is False
    assert load_observations(path)[0].has_tangent.tolist() == [True, False]
