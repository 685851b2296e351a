"""Camera paths around a scene with per-frame rolling-shutter velocities.

Velocities come from finite differences of consecutive poses: a frame's
readout covers ``readout_fraction`` of the time to the next frame, spread
over ``height`` rows.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from src.exceptions import CameraInsideScene
from src.geometry.lines import so3_exp
from src.models import RsCamera, Scene, TrajectoryKind, TrajectorySpec
from src.synth.scene import scene_bounds

logger = logging.getLogger(__name__)

DOWN = np.array([0.0, 1.0, 0.0])


def look_at(center: Sequence[float], target: Sequence[float], down: Sequence[float] = DOWN) -> np.ndarray:
    """World-to-camera rotation with z toward the target and y toward ``down``"""
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=float), z)
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("viewing direction is parallel to the down vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def _ring_poses(spec: TrajectorySpec) -> List[Tuple[np.ndarray, np.ndarray]]:
    target = np.asarray(spec.target, dtype=float)
    offset = np.deg2rad(spec.azimuth_offset_deg)
    poses = []
    for k in range(spec.n_cameras):
        angle = offset + 2.0 * np.pi * k / spec.n_cameras
        center = target + np.array([spec.radius * np.cos(angle), spec.elevation, spec.radius * np.sin(angle)])
        poses.append((look_at(center, target), center))
    return poses


def _linear_poses(spec: TrajectorySpec) -> List[Tuple[np.ndarray, np.ndarray]]:
    target = np.asarray(spec.target, dtype=float)
    xs = np.linspace(-spec.displacement / 2.0, spec.displacement / 2.0, spec.n_cameras)
    poses = []
    for x in xs:
        center = target + np.array([x, 0.0, -spec.depth])
        poses.append((look_at(center, center + np.array([0.0, 0.0, 1.0])), center))
    return poses


def _xy_translation_poses(spec: TrajectorySpec) -> List[Tuple[np.ndarray, np.ndarray]]:
    # zig-zag in the image plane, no rotation and no motion along the optical axis
    target = np.asarray(spec.target, dtype=float)
    step = spec.displacement / max(spec.n_cameras - 1, 1)
    start = target + np.array([-spec.displacement / 2.0, 0.0, -spec.depth])
    return [(np.eye(3), start + np.array([k * step, 0.5 * step * (k % 2), 0.0]))
            for k in range(spec.n_cameras)]


POSE_GENERATORS = {
    TrajectoryKind.RING: _ring_poses,
    TrajectoryKind.LINEAR: _linear_poses,
    TrajectoryKind.XY_TRANSLATION: _xy_translation_poses,
}


def frame_velocities(R_a: np.ndarray, C_a: np.ndarray, R_b: np.ndarray, C_b: np.ndarray,
                     rows: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row (omega, d) moving pose a toward pose b over ``rows`` rows"""
    delta = Rotation.from_matrix(R_b @ R_a.T).as_rotvec()
    t_a = -R_a @ C_a
    omega = delta / rows
    d = (np.cross(delta, t_a) - R_a @ (C_b - C_a)) / rows
    return omega, d


def make_trajectory(spec: TrajectorySpec, scene: Optional[Scene] = None) -> List[RsCamera]:
    poses = POSE_GENERATORS[spec.kind](spec)

    if scene is not None and scene.num_lines:
        low, high = scene_bounds(scene)
        for index, (_, center) in enumerate(poses):
            if np.all(center >= low) and np.all(center <= high):
                raise CameraInsideScene(f"camera {index} at {center.tolist()} is inside the scene bounds")

    K = spec.intrinsics()
    rows = spec.height / spec.readout_fraction
    cameras = []
    for k, (R, center) in enumerate(poses):
        omega, d = np.zeros(3), np.zeros(3)
        if not spec.static:
            if k + 1 < len(poses):
                omega, d = frame_velocities(R, center, *poses[k + 1], rows)
            else:
                # last frame continues the previous motion
                omega_prev, _ = frame_velocities(*poses[k - 1], R, center, rows)
                R_next = so3_exp(omega_prev * rows) @ R
                C_next = center + (center - poses[k - 1][1])
                omega, d = frame_velocities(R, center, R_next, C_next, rows)
        if spec.kind == TrajectoryKind.XY_TRANSLATION:
            omega = np.zeros(3)
            d = np.array([d[0], d[1], 0.0])
        cameras.append(RsCamera(K=K, R0=R, t0=-R @ center, omega=omega, d=d,
                                height=spec.height, width=spec.width))
    logger.info("built %s trajectory with %d cameras", spec.kind.value, len(cameras))
    return cameras


def random_camera(rng: np.random.Generator, focal: float = 500.0, width: int = 640,
                  height: int = 480, motion: float = 1.0) -> RsCamera:
    """Camera near the origin looking roughly along +z, with small random velocities"""
    K = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    R = so3_exp(rng.normal(scale=0.2, size=3))
    t = rng.normal(scale=0.5, size=3)
    omega = motion * rng.normal(scale=2e-4, size=3)
    d = motion * rng.normal(scale=1e-3, size=3)
    return RsCamera(K=K, R0=R, t0=t, omega=omega, d=d, height=height, width=width)
