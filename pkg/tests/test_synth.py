import numpy as np
import pytest

from src.exceptions import CameraInsideScene
from src.geometry.lines import so3_exp
from src.geometry.rs_camera import coefficient_matrix, curve_gradient, oriented_tangent
from src.models import GaugeSpec, NoiseMode, ParameterSet, TrajectoryKind, TrajectorySpec
from src.synth.observations import generate_observations, perturb_initialization, reaim_line
from src.synth.scene import make_cube_scene, random_line, scene_lines, select_lines
from src.synth.trajectory import frame_velocities, look_at, make_trajectory
from src.utils.metrics import line_direction_error, rotation_error


@pytest.fixture(scope="module")
def cube():
    return make_cube_scene()


@pytest.fixture(scope="module")
def ring(cube):
    return make_trajectory(TrajectorySpec(), cube)


def test_cube_has_twelve_unit_edges(cube):
    assert cube.num_lines == 12
    assert all(seg.length == pytest.approx(2.0) for seg in cube.segments)
    assert all(abs(L.klein()) < 1e-12 for L in scene_lines(cube))


def test_rotated_cube_keeps_centre():
    scene = make_cube_scene(side=1.0, center=(1.0, 2.0, 3.0), rotation=so3_exp([0.3, 0.1, 0.2]))
    points = np.array([p for seg in scene.segments for p in (seg.p0, seg.p1)])
    assert np.allclose(points.mean(axis=0), [1.0, 2.0, 3.0])


def test_select_lines(cube):
    subset = select_lines(cube, 5, seed=3)
    assert subset.num_lines == 5
    assert all(any(seg is original for original in cube.segments) for seg in subset.segments)
    with pytest.raises(ValueError):
        select_lines(cube, 13)


def test_ring_cameras_look_at_target(ring):
    spec = TrajectorySpec()
    assert len(ring) == spec.n_cameras
    for cam in ring:
        toward = -cam.center / np.linalg.norm(cam.center)
        assert np.dot(cam.R0[2], toward) == pytest.approx(1.0)
        assert np.hypot(cam.center[0], cam.center[2]) == pytest.approx(spec.radius)
        assert cam.center[1] == pytest.approx(spec.elevation)


def test_ring_velocities_reach_next_pose(ring):
    rows = TrajectorySpec().height / TrajectorySpec().readout_fraction
    for cam, following in zip(ring, ring[1:]):
        assert np.allclose(so3_exp(cam.omega * rows) @ cam.R0, following.R0, atol=1e-10)


def test_frame_velocities_first_order(rng):
    R_a, C_a = so3_exp(rng.normal(size=3)), rng.normal(size=3)
    R_b = so3_exp(1e-4 * rng.normal(size=3)) @ R_a
    C_b = C_a + 1e-4 * rng.normal(size=3)
    omega, d = frame_velocities(R_a, C_a, R_b, C_b, 100.0)
    assert np.allclose(-R_a @ C_a + 100.0 * d, -R_b @ C_b, atol=1e-7)
    assert np.allclose(so3_exp(100.0 * omega) @ R_a, R_b, atol=1e-12)


def test_camera_inside_scene_rejected(cube):
    with pytest.raises(CameraInsideScene):
        make_trajectory(TrajectorySpec(radius=0.5, elevation=0.0), cube)


def test_static_and_xy_trajectories(cube):
    static = make_trajectory(TrajectorySpec(static=True), cube)
    assert all(cam.is_static for cam in static)

    spec = TrajectorySpec(kind=TrajectoryKind.XY_TRANSLATION, n_cameras=5, displacement=2.0, depth=7.0,
                          target=(1.0, 0.0, 7.0))
    xy = make_trajectory(spec)
    for cam in xy:
        assert np.allclose(cam.R0, np.eye(3))
        assert np.allclose(cam.omega, 0.0)
        assert cam.d[2] == 0.0
    assert np.allclose(xy[0].center, [0.0, 0.0, 0.0])


def test_look_at_rejects_vertical_view():
    with pytest.raises(ValueError):
        look_at([0.0, -5.0, 0.0], [0.0, 0.0, 0.0])


def test_noiseless_tangents_match_curve(cube, ring):
    obs_set = generate_observations(cube, ring, points_per_line=6)
    lines = scene_lines(cube)
    assert len(obs_set) + len(obs_set.dropped) == len(ring) * cube.num_lines
    for obs in obs_set:
        assert obs.num_samples == 6
        c = coefficient_matrix(ring[obs.camera_id]) @ lines[obs.line_id].vector
        for (u, v), s in zip(obs.q, obs.s):
            assert np.allclose(s, oriented_tangent(*curve_gradient(c, u, v)), atol=1e-9)


def test_generation_is_seeded(cube, ring):
    first = generate_observations(cube, ring, noise_px=1.0, tangent_noise_rad=0.01, seed=11)
    second = generate_observations(cube, ring, noise_px=1.0, tangent_noise_rad=0.01, seed=11)
    other = generate_observations(cube, ring, noise_px=1.0, tangent_noise_rad=0.01, seed=12)
    assert all(np.array_equal(a.q, b.q) and np.array_equal(a.s, b.s) for a, b in zip(first, second))
    assert not all(np.array_equal(a.q, b.q) for a, b in zip(first, other))


def test_endpoint_noise_leaves_interior_samples(cube, ring):
    clean = generate_observations(cube, ring, seed=2)
    noisy = generate_observations(cube, ring, noise_px=1.0, seed=2, noise_mode=NoiseMode.ENDPOINTS)
    for a, b in zip(clean, noisy):
        assert np.array_equal(a.q[1:-1], b.q[1:-1])
        assert not np.array_equal(a.q[[0, -1]], b.q[[0, -1]])
        assert np.all((b.q[:, 1] >= 0) & (b.q[:, 1] <= ring[b.camera_id].height - 1))


@pytest.mark.parametrize("kwargs", [{'points_per_line': 1}, {'points_per_line': 65}, {'noise_px': -0.1}])
def test_generation_rejects_bad_arguments(cube, ring, kwargs):
    with pytest.raises(ValueError):
        generate_observations(cube, ring, **kwargs)


def test_perturbation_magnitudes(cube, ring):
    truth = ParameterSet(cameras=ring, lines=scene_lines(cube))
    initial = perturb_initialization(truth, rot_deg=0.5, trans_frac=0.01, line_angle_deg=2.0, seed=4)
    gauge = GaugeSpec()

    assert initial.cameras[0] is truth.cameras[0]
    for index, (cam, true_cam) in enumerate(zip(initial.cameras, truth.cameras)):
        if index == 0:
            continue
        assert rotation_error(true_cam.R0, cam.R0) == pytest.approx(np.deg2rad(0.5), abs=1e-9)
        assert cam.is_static
        moved = np.linalg.norm(cam.t0 - true_cam.t0)
        if index == gauge.scale_camera_id:
            anchor = truth.cameras[0].center
            assert np.linalg.norm(cam.center - anchor) == pytest.approx(np.linalg.norm(true_cam.center - anchor))
        else:
            assert moved == pytest.approx(0.01 * np.linalg.norm(true_cam.t0))
    for line, true_line in zip(initial.lines, truth.lines):
        assert line_direction_error(true_line.a, line.a) == pytest.approx(np.deg2rad(2.0), abs=1e-9)


def test_perturbation_rejects_negative_magnitudes(cube, ring):
    with pytest.raises(ValueError):
        perturb_initialization(ParameterSet(cameras=ring, lines=scene_lines(cube)), rot_deg=-1.0)


def test_reaim_keeps_anchor(rng):
    L = random_line(rng)
    turned = reaim_line(L, 0.1, rng)
    assert np.allclose(np.cross(L.closest_point(), turned.a), turned.n)
    assert line_direction_error(L.a, turned.a) == pytest.approx(0.1, abs=1e-12)
