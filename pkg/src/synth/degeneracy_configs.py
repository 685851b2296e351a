"""Analytic constructions of degenerate reconstructions.

Each configuration pairs a ground-truth problem with a parameter set that
explains some or all of the observations equally well while being far from
the truth:

* plane: every line flattened onto the cameras' common horizontal plane,
  with a roll velocity that sweeps that plane down the image at one row
  per row. Every curve becomes the row itself.
* two_view_translation: two views translating along their baseline. Lines
  mapped as (n / s, a / (s r)) with the first view's velocity scaled by r.
  The coplanar variant (line and both centres in one plane) also fixes the
  second view.
* xy_translation: translation in the image plane only. Every line collapses
  onto one line parallel to x at the depth where a y-velocity of one row per
  row keeps each point on its own row.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from src.geometry.lines import plucker_from_points, so3_exp
from src.geometry.rs_camera import coefficient_matrix
from src.models import (DegeneracyKind, GaugeSpec, InvalidPolicy, LineObservation, ParameterSet,
                        PluckerLine, ResidualConfig, ResidualVariant, RsCamera, Scene, Segment,
                        TrajectoryKind, TrajectorySpec)
from src.optim.problem import BaProblem, build_problem
from src.synth.observations import generate_observations
from src.synth.scene import make_cube_scene, scene_lines
from src.synth.trajectory import make_trajectory

logger = logging.getLogger(__name__)

CUBE_TILT = (0.35, 0.5, 0.2)
DEGENERACY_GAUGE = GaugeSpec(fix_velocity=False)
DEGENERACY_RESIDUALS = ResidualConfig(variant=ResidualVariant.E1_PERP_TANGENT,
                                      invalid_policy=InvalidPolicy.PENALTY)

# two-view constants
TWO_VIEW_SPEED = 2e-4
TWO_VIEW_BASELINE = np.array([0.0, 1.0, 0.0])
TWO_VIEW_SCALE = 2.0
TWO_VIEW_RATIO = 1.5
COPLANAR_POINT = np.array([1.2, -0.5, 6.0])
COPLANAR_DIRECTION = np.array([0.1, 1.0, 0.5])


@dataclass
class DegeneracyConfig:
    kind: DegeneracyKind
    problem: BaProblem
    truth: ParameterSet
    degenerate: ParameterSet
    details: Dict[str, Any] = field(default_factory=dict)

    def __iter__(self) -> Iterator[Any]:
        return iter((self.problem, self.degenerate, self.truth))


def _truth_problem(scene: Scene, cameras: List[RsCamera], points_per_line: int):
    observations = generate_observations(scene, cameras, points_per_line=points_per_line)
    lines = scene_lines(scene)
    problem = build_problem(cameras, lines, observations.observations,
                            cfg=DEGENERACY_RESIDUALS, gauge=DEGENERACY_GAUGE)
    return problem, ParameterSet(cameras=cameras, lines=lines)


def plane_config(points_per_line: int = 5) -> DegeneracyConfig:
    # principal point on the top row so the horizon plane maps to row 0
    spec = TrajectorySpec(kind=TrajectoryKind.RING, n_cameras=8, radius=6.0, elevation=0.0,
                          principal_point=(320.0, 0.0))
    scene = make_cube_scene(side=2.0, center=(0.0, 2.0, 0.0), rotation=so3_exp(CUBE_TILT))
    cameras = make_trajectory(spec, scene)
    problem, truth = _truth_problem(scene, cameras, points_per_line)

    focal = spec.focal
    omega = np.array([-1.0 / focal, 0.0, 0.0])
    degenerate_cameras = [cam.replace(omega=omega, d=np.cross(omega, cam.t0)) for cam in cameras]
    flattened = []
    for seg in scene.segments:
        p0, p1 = seg.p0.copy(), seg.p1.copy()
        p0[1] = p1[1] = 0.0
        flattened.append(plucker_from_points(p1, p0))

    return DegeneracyConfig(
        kind=DegeneracyKind.PLANE,
        problem=problem,
        truth=truth,
        degenerate=ParameterSet(cameras=degenerate_cameras, lines=flattened),
        details={'omega': omega.tolist(), 'plane': 'y = 0'},
    )


def two_view_cameras(speed: float = TWO_VIEW_SPEED) -> List[RsCamera]:
    K = TrajectorySpec().intrinsics()
    d = speed * TWO_VIEW_BASELINE
    return [
        RsCamera(K=K, R0=np.eye(3), t0=np.zeros(3), d=d),
        RsCamera(K=K, R0=np.eye(3), t0=-TWO_VIEW_BASELINE, d=d),
    ]


def map_two_view_line(line: PluckerLine, scale: float, ratio: float) -> PluckerLine:
    """(n, a) -> (n / s, a / (s r))"""
    return PluckerLine(n=line.n / scale, a=line.a / (scale * ratio))


def coefficient_ratio(cam_a: RsCamera, line_a: PluckerLine, cam_b: RsCamera, line_b: PluckerLine) -> float:
    """Least-squares factor k with c_b ~ k c_a"""
    c_a = coefficient_matrix(cam_a) @ line_a.vector
    c_b = coefficient_matrix(cam_b) @ line_b.vector
    return float(np.dot(c_a, c_b) / np.dot(c_a, c_a))


def two_view_config(coplanar: bool = False, points_per_line: int = 5,
                    scale: float = TWO_VIEW_SCALE, ratio: float = TWO_VIEW_RATIO) -> DegeneracyConfig:
    cameras = two_view_cameras()
    if coplanar:
        segments = [Segment(p0=COPLANAR_POINT - 1.5 * COPLANAR_DIRECTION,
                            p1=COPLANAR_POINT + 1.5 * COPLANAR_DIRECTION)]
        scene = Scene(segments=segments)
    else:
        scene = make_cube_scene(side=1.5, center=(0.0, 0.5, 6.0), rotation=so3_exp(CUBE_TILT))
    problem, truth = _truth_problem(scene, cameras, points_per_line)

    degenerate_lines = [map_two_view_line(line, scale, ratio) for line in truth.lines]
    first = cameras[0].replace(d=ratio * cameras[0].d)
    second = cameras[1]
    details: Dict[str, Any] = {'scale': scale, 'ratio': ratio, 'coplanar': coplanar}

    if coplanar:
        line = truth.lines[0]
        # baseline x a = kappa n when the line, both centres and the motion share a plane
        moment = np.cross(TWO_VIEW_BASELINE, line.a)
        kappa = float(np.dot(moment, line.n) / np.dot(line.n, line.n))
        second_ratio = (ratio - kappa) / (1.0 - kappa)
        second = cameras[1].replace(d=second_ratio * cameras[1].d)
        details.update({'kappa': kappa, 'second_ratio': second_ratio})

    details['view_ratios'] = [
        [coefficient_ratio(cam, line, deg_cam, deg_line)
         for line, deg_line in zip(truth.lines, degenerate_lines)]
        for cam, deg_cam in zip(cameras, (first, second))
    ]
    return DegeneracyConfig(
        kind=DegeneracyKind.TWO_VIEW_TRANSLATION,
        problem=problem,
        truth=truth,
        degenerate=ParameterSet(cameras=[first, second], lines=degenerate_lines),
        details=details,
    )


def collapse_depth_scale(depth: float, focal: float) -> float:
    """Per-row y-velocity that keeps points at ``depth`` on their own row"""
    return depth / focal


def collapsed_point(cam: RsCamera, q, depth_scale: float) -> np.ndarray:
    """Point on the collapsed line that projects exactly to sample q in a collapsed camera"""
    u, v = float(q[0]), float(q[1])
    cx, cy = cam.K[0, 2], cam.K[1, 2]
    return np.array([depth_scale * (u - cx) - cam.t0[0] - v * cam.d[0],
                     -cy * depth_scale,
                     cam.K[0, 0] * depth_scale])


def collapsed_points(config: DegeneracyConfig, observations: Optional[List[LineObservation]] = None) -> np.ndarray:
    """One collapsed point per sample, in observation order"""
    scale = config.details['depth_scale']
    observations = observations or config.problem.observations
    cameras = config.degenerate.cameras
    return np.array([collapsed_point(cameras[obs.camera_id], q, scale)
                     for obs in observations for q in obs.q])


def xy_translation_config(points_per_line: int = 5, n_cameras: int = 5,
                          displacement: float = 2.0, depth: float = 7.0) -> DegeneracyConfig:
    spec = TrajectorySpec(kind=TrajectoryKind.XY_TRANSLATION, n_cameras=n_cameras,
                          displacement=displacement, depth=depth,
                          target=(displacement / 2.0, 0.0, depth))
    scene = make_cube_scene(side=2.0, center=spec.target, rotation=so3_exp(CUBE_TILT))
    cameras = make_trajectory(spec, scene)
    problem, truth = _truth_problem(scene, cameras, points_per_line)

    focal = spec.focal
    cy = spec.intrinsics()[1, 2]
    k = collapse_depth_scale(depth, focal)
    y_star, z_star = -cy * k, focal * k
    degenerate_cameras = [
        cam.replace(t0=np.array([cam.t0[0], 0.0, 0.0]), omega=np.zeros(3),
                    d=np.array([cam.d[0], k, 0.0]))
        for cam in cameras
    ]
    collapsed = PluckerLine(n=np.array([0.0, z_star, -y_star]), a=np.array([1.0, 0.0, 0.0]))

    return DegeneracyConfig(
        kind=DegeneracyKind.XY_TRANSLATION,
        problem=problem,
        truth=truth,
        degenerate=ParameterSet(cameras=degenerate_cameras, lines=[collapsed] * len(truth.lines)),
        details={'depth_scale': k, 'collapsed_y': y_star, 'collapsed_z': z_star},
    )


CONFIG_BUILDERS = {
    DegeneracyKind.PLANE: plane_config,
    DegeneracyKind.TWO_VIEW_TRANSLATION: two_view_config,
    DegeneracyKind.XY_TRANSLATION: xy_translation_config,
}


def make_degeneracy_config(kind: DegeneracyKind, **kwargs) -> DegeneracyConfig:
    if isinstance(kind, str):
        kind = DegeneracyKind(kind)
    config = CONFIG_BUILDERS[kind](**kwargs)
    logger.info("built %s degeneracy config: %d cameras, %d lines, %d observations",
                kind.value, config.problem.num_cameras, config.problem.num_lines,
                len(config.problem.observations))
    return config
