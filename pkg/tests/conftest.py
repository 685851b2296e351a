from pathlib import Path

import numpy as np
import pytest

from src.experiment_manager import make_problem, simulate
from src.models import RsCamera, TrajectorySpec
from src.run_config import build_run_config
from src.synth.trajectory import random_camera

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def static_camera():
    return RsCamera(K=TrajectorySpec().intrinsics(), R0=np.eye(3), t0=np.zeros(3))


@pytest.fixture
def moving_camera(rng):
    return random_camera(rng)


@pytest.fixture(scope="module")
def cube_run():
    """Default run: cube edges seen from an 8-view ring, noiseless"""
    return build_run_config({})


@pytest.fixture(scope="module")
def cube_simulation(cube_run):
    return simulate(cube_run)


@pytest.fixture
def cube_problem(cube_run, cube_simulation):
    """Problem whose state is the ground truth"""
    return make_problem(cube_run, cube_simulation.truth, cube_simulation.observations.observations)


@pytest.fixture
def config_dir():
    return str(CONFIG_DIR)
