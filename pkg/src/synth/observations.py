import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import LineNotVisible
from src.geometry.lines import so3_exp
from src.geometry.rs_camera import project_line_to_samples, project_point_rs
from src.models import (GaugeSpec, LineObservation, NoiseMode, ParameterSet, PluckerLine, RsCamera,
                        Scene, Segment)
from src.synth.scene import segment_line

logger = logging.getLogger(__name__)

SPAN_SAMPLES = 200


@dataclass
class ObservationSet:
    """Generated observations plus the (camera, line) pairs that were dropped"""
    observations: List[LineObservation]
    dropped: List[Tuple[int, int, str]] = field(default_factory=list)

    @property
    def num_samples(self) -> int:
        return sum(obs.num_samples for obs in self.observations)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)


def visible_row_span(cam: RsCamera, segment: Segment) -> Tuple[float, float]:
    """Row interval covered by the in-image part of a segment's RS projection"""
    rows = []
    for alpha in np.linspace(0.0, 1.0, SPAN_SAMPLES):
        pixel = project_point_rs(cam, (1.0 - alpha) * segment.p0 + alpha * segment.p1)
        if pixel is None:
            continue
        u, v = pixel
        if 0.0 <= u < cam.width and 0.0 <= v <= cam.height - 1:
            rows.append(v)
    if not rows:
        raise LineNotVisible("segment does not project into the image")
    return min(rows), max(rows)


def _observe(cam: RsCamera, segment: Segment, line: PluckerLine, points_per_line: int):
    v_min, v_max = visible_row_span(cam, segment)
    if v_max - v_min < points_per_line:
        raise LineNotVisible(f"visible span of {v_max - v_min:.1f} rows is shorter than {points_per_line}")
    samples = project_line_to_samples(cam, line, np.linspace(v_min, v_max, points_per_line))
    if len(samples) < 2:
        raise LineNotVisible(f"only {len(samples)} samples fall inside the image")
    return samples


def _rotate(vec: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * vec[0] - s * vec[1], s * vec[0] + c * vec[1]])


def generate_observations(scene: Scene, cameras: Sequence[RsCamera], points_per_line: int = 5,
                          noise_px: float = 0.0, tangent_noise_rad: float = 0.0, seed: int = 0,
                          noise_mode: NoiseMode = NoiseMode.SAMPLES) -> ObservationSet:
    """Sample every visible (camera, line) curve and add Gaussian noise.

    Pairs that are not visible enough are dropped and listed in the result.
    """
    if not 2 <= points_per_line <= 64:
        raise ValueError(f"points_per_line must be in [2, 64], got {points_per_line}")
    if noise_px < 0 or tangent_noise_rad < 0:
        raise ValueError("noise levels must be non-negative")

    rng = np.random.default_rng(seed)
    lines = [segment_line(seg) for seg in scene.segments]
    result = ObservationSet(observations=[])

    for cam_id, cam in enumerate(cameras):
        for line_id, (segment, line) in enumerate(zip(scene.segments, lines)):
            try:
                samples = _observe(cam, segment, line, points_per_line)
            except LineNotVisible as e:
                logger.info("dropping camera %d line %d: %s", cam_id, line_id, e)
                result.dropped.append((cam_id, line_id, str(e)))
                continue

            q = np.array([[u, v] for u, v, _ in samples])
            s = np.array([tangent for _, _, tangent in samples])
            noisy = np.ones(len(q), dtype=bool)
            if noise_mode == NoiseMode.ENDPOINTS:
                noisy[1:-1] = False
            q = q + noise_px * rng.standard_normal(q.shape) * noisy[:, None]
            q[:, 1] = np.clip(q[:, 1], 0.0, cam.height - 1)
            angles = tangent_noise_rad * rng.standard_normal(len(s)) * noisy
            s = np.array([_rotate(tangent, angle) for tangent, angle in zip(s, angles)])
            result.observations.append(LineObservation(camera_id=cam_id, line_id=line_id, q=q, s=s))

    logger.info("generated %d observations (%d samples), dropped %d",
                len(result.observations), result.num_samples, len(result.dropped))
    return result


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    vec = rng.standard_normal(3)
    return vec / np.linalg.norm(vec)


def reaim_line(line: PluckerLine, angle: float, rng: np.random.Generator) -> PluckerLine:
    """Rotate a line's direction by exactly ``angle`` about its point nearest the origin"""
    direction = line.unit_direction()
    axis = np.cross(direction, _random_unit(rng))
    axis /= np.linalg.norm(axis)
    anchor = line.closest_point()
    a = so3_exp(angle * axis) @ direction
    return PluckerLine(n=np.cross(anchor, a), a=a)


def _keep_baseline(R0: np.ndarray, t0: np.ndarray, true_cam: RsCamera, anchor: np.ndarray) -> np.ndarray:
    """Translation that puts the centre back at the true distance from the anchor"""
    offset = -R0.T @ t0 - anchor
    length = np.linalg.norm(true_cam.center - anchor)
    if np.linalg.norm(offset) == 0:
        return t0
    return -R0 @ (anchor + offset * length / np.linalg.norm(offset))


def perturb_initialization(truth: ParameterSet, rot_deg: float = 0.0, trans_frac: float = 0.0,
                           line_angle_deg: float = 0.0, seed: int = 0,
                           gauge: Optional[GaugeSpec] = None,
                           zero_velocities: bool = True) -> ParameterSet:
    """Initial guess near the truth.

    Gauge cameras keep their true values. Every other camera is rotated by
    exactly rot_deg about a random axis and has its translation moved by
    trans_frac of its norm; the scale camera keeps its distance to the first
    gauge camera. Lines turn by exactly line_angle_deg.
    """
    if min(rot_deg, trans_frac, line_angle_deg) < 0:
        raise ValueError("perturbation magnitudes must be non-negative")
    gauge = gauge or GaugeSpec()
    rng = np.random.default_rng(seed)
    angle = np.deg2rad(rot_deg)

    cameras = []
    for index, cam in enumerate(truth.cameras):
        if index in gauge.fixed_camera_ids:
            cameras.append(cam)
            continue
        R0, t0 = cam.R0, cam.t0
        if angle > 0:
            R0 = so3_exp(angle * _random_unit(rng)) @ R0
        if trans_frac > 0:
            t0 = t0 + trans_frac * np.linalg.norm(t0) * _random_unit(rng)
        if index == gauge.scale_camera_id and gauge.fixed_camera_ids:
            t0 = _keep_baseline(R0, t0, cam, truth.cameras[gauge.fixed_camera_ids[0]].center)
        updated = cam.replace(R0=R0, t0=t0)
        cameras.append(updated.frozen_velocity() if zero_velocities else updated)

    line_angle = np.deg2rad(line_angle_deg)
    lines = [reaim_line(line, line_angle, rng) if line_angle > 0 else line for line in truth.lines]
    return ParameterSet(cameras=cameras, lines=lines)
