import json

import pytest

from src.exceptions import ConfigError
from src.models import ResidualVariant, ScaleFix, SolverMode, TrajectoryKind
from src.run_config import (ENV_CONFIG_DIR, ENV_MAX_WORKERS, OutputConfig, RunConfig,
                            apply_overrides, build_run_config, merge)
from src.run_config import config_dir as resolve_config_dir


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(ENV_MAX_WORKERS, raising=False)
    monkeypatch.delenv(ENV_CONFIG_DIR, raising=False)


def test_defaults():
    run = build_run_config()
    assert run.synth.trajectory == TrajectoryKind.RING
    assert run.synth.n_cameras == 8
    assert run.solver.mode == SolverMode.RS
    assert run.residual.variant == ResidualVariant.E1_PERP_TANGENT
    assert run.residual.lam == 1.0
    assert run.runtime.max_workers == 4


def test_settings_file_is_a_valid_manifest(config_dir):
    with open(f"{config_dir}/settings.json") as f:
        settings = json.load(f)
    run = build_run_config(settings)
    assert run.output.filename_prefix == 'rslba_'
    assert set(settings['output']) == set(OutputConfig.model_fields)
    assert run.solver.scale_fix == ScaleFix.FIX_SECOND_TRANSLATION_NORM


def test_lambda_alias_round_trip():
    run = build_run_config({'residual': {'lambda': 4.0}})
    assert run.residual.lam == 4.0
    dumped = run.model_dump(mode='json', by_alias=True)
    assert dumped['residual']['lambda'] == 4.0
    assert RunConfig.model_validate(dumped) == run


@pytest.mark.parametrize('manifest', [
    {'synth': {'unknown_key': 1}},
    {'synth': {'points_per_line': 1}},
    {'synth': {'n_cameras': 1}},
    {'residual': {'lambda': -1.0}},
    {'solver': {'mode': 'global'}},
    {'bogus_section': {}},
    {'output': {'format': 'table'}},
])
def test_invalid_manifests(manifest):
    with pytest.raises(ConfigError):
        build_run_config(manifest)


def test_layers_and_overrides():
    run = build_run_config({'synth': {'noise_px': 1.0, 'n_cameras': 5}},
                           {'synth': {'noise_px': 2.0}},
                           overrides={'synth.points_per_line': 7, 'seed': 3, 'synth.n_cameras': None})
    assert run.synth.noise_px == 2.0
    assert run.synth.n_cameras == 5
    assert run.synth.points_per_line == 7
    assert run.seed == 3


def test_merge_is_recursive_and_pure():
    base = {'a': {'b': 1, 'c': 2}}
    merged = merge(base, {'a': {'c': 3}})
    assert merged == {'a': {'b': 1, 'c': 3}}
    assert base == {'a': {'b': 1, 'c': 2}}
    assert apply_overrides({}, {'x.y.z': 1}) == {'x': {'y': {'z': 1}}}


def test_max_workers_from_environment(monkeypatch):
    monkeypatch.setenv(ENV_MAX_WORKERS, '2')
    assert build_run_config().runtime.max_workers == 2
    assert build_run_config(overrides={'runtime.max_workers': 6}).runtime.max_workers == 6


def test_invalid_max_workers_environment(monkeypatch):
    monkeypatch.setenv(ENV_MAX_WORKERS, 'many')
    with pytest.raises(ConfigError):
        build_run_config()


def test_config_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(ENV_CONFIG_DIR, str(tmp_path))
    assert resolve_config_dir() == tmp_path


def test_section_conversions():
    run = build_run_config({
        'synth': {'n_cameras': 4, 'cube_center': [1.0, 0.0, 0.0]},
        'solver': {'fixed_cameras': [0, 2], 'fix_velocity': False, 'max_iter': 7},
        'residual': {'variant': 'perp_only', 'huber_delta': 2.0},
    }, overrides={'seed': 5})
    spec = run.synth.trajectory_spec()
    assert spec.n_cameras == 4
    assert spec.target == (1.0, 0.0, 0.0)
    gauge = run.solver.gauge()
    assert gauge.fixed_camera_ids == (0, 2)
    assert not gauge.fix_velocity
    options = run.solver.options(seed=run.seed)
    assert options.max_iter == 7 and options.seed == 5
    cfg = run.residual.residual_config()
    assert cfg.variant == ResidualVariant.PERP_ONLY
    assert cfg.huber_delta == 2.0
    assert cfg.rows_per_sample == 1
