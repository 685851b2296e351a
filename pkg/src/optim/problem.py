"""Bundle-adjustment problem: validation, gauge handling, parameter layout and
residual/Jacobian assembly."""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from src.exceptions import ConfigError, DisconnectedGraph, MissingReference
from src.geometry.lines import (orthogonal_unit, orthonormal_to_plucker, plucker_to_orthonormal, skew,
                                update_orthonormal)
from src.geometry.rs_camera import check_camera, coefficient_matrix
from src.models import (GaugeSpec, LineObservation, OrthonormalLine, PluckerLine, ResidualConfig,
                        RsCamera, ScaleFix, SolverMode)
from src.optim.jacobians import CAMERA_DOF, LINE_DOF, apply_camera_delta, residual_jacobian
from src.optim.residuals import evaluate_rows

logger = logging.getLogger(__name__)


@dataclass
class BaProblem:
    cameras: List[RsCamera]
    lines: List[OrthonormalLine]
    observations: List[LineObservation]
    cfg: ResidualConfig = field(default_factory=ResidualConfig)
    gauge: GaugeSpec = field(default_factory=GaugeSpec)
    mode: SolverMode = SolverMode.RS
    under_constrained: List[int] = field(default_factory=list)

    @property
    def num_cameras(self) -> int:
        return len(self.cameras)

    @property
    def num_lines(self) -> int:
        return len(self.lines)

    @property
    def num_samples(self) -> int:
        return sum(obs.num_samples for obs in self.observations)

    @property
    def num_residuals(self) -> int:
        return self.num_samples * self.cfg.rows_per_sample

    def plucker_lines(self) -> List[PluckerLine]:
        return [orthonormal_to_plucker(tau) for tau in self.lines]

    def with_state(self, cameras: Sequence[RsCamera], lines: Sequence[Union[OrthonormalLine, PluckerLine]]) -> 'BaProblem':
        return replace(self, cameras=list(cameras), lines=[_as_orthonormal(L) for L in lines])

    def with_config(self, **changes) -> 'BaProblem':
        return replace(self, **changes)


def _as_orthonormal(line: Union[OrthonormalLine, PluckerLine]) -> OrthonormalLine:
    if isinstance(line, OrthonormalLine):
        return line
    return plucker_to_orthonormal(line)


def build_problem(cameras: Sequence[RsCamera],
                  lines: Sequence[Union[OrthonormalLine, PluckerLine]],
                  observations: Sequence[LineObservation],
                  cfg: Optional[ResidualConfig] = None,
                  gauge: Optional[GaugeSpec] = None,
                  mode: SolverMode = SolverMode.RS) -> BaProblem:
    """Validate references, gauge and connectivity, and flag weakly observed lines."""
    cfg = cfg or ResidualConfig()
    gauge = gauge or GaugeSpec()
    cameras = list(cameras)
    lines = [_as_orthonormal(L) for L in lines]
    observations = list(observations)

    for cam in cameras:
        check_camera(cam)

    for index, obs in enumerate(observations):
        if not 0 <= obs.camera_id < len(cameras):
            raise MissingReference(f"observation {index} references camera {obs.camera_id}")
        if not 0 <= obs.line_id < len(lines):
            raise MissingReference(f"observation {index} references line {obs.line_id}")
        if not 2 <= obs.num_samples <= 64:
            logger.warning("observation %d has %d samples, outside [2, 64]", index, obs.num_samples)

    if not gauge.fixed_camera_ids:
        logger.warning("no camera is fixed; the problem keeps its full gauge freedom")
    for cam_id in gauge.fixed_camera_ids:
        if not 0 <= cam_id < len(cameras):
            raise ConfigError(f"fixed camera {cam_id} does not exist")
    if gauge.scale_fix == ScaleFix.FIX_LINE and not 0 <= gauge.scale_line_id < len(lines):
        raise ConfigError(f"scale line {gauge.scale_line_id} does not exist")

    counts = Counter(obs.line_id for obs in observations)
    under_constrained = [line_id for line_id in range(len(lines)) if counts[line_id] < 2]
    if under_constrained:
        logger.warning("lines observed fewer than twice: %s", under_constrained)

    _check_connected(len(cameras), len(lines), observations)

    return BaProblem(cameras=cameras, lines=lines, observations=observations, cfg=cfg,
                     gauge=gauge, mode=mode, under_constrained=under_constrained)


def _check_connected(num_cameras: int, num_lines: int, observations: Sequence[LineObservation]) -> None:
    size = num_cameras + num_lines
    if size == 0:
        return
    rows = [obs.camera_id for obs in observations]
    cols = [num_cameras + obs.line_id for obs in observations]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))
    components, _ = connected_components(graph, directed=False)
    if components > 1:
        raise DisconnectedGraph(f"observation graph has {components} components")


def tangent_basis(t: np.ndarray) -> np.ndarray:
    """Two orthonormal columns spanning the plane perpendicular to t"""
    direction = t / np.linalg.norm(t)
    b1 = orthogonal_unit(direction)
    return np.column_stack([b1, np.cross(direction, b1)])


@dataclass
class ParameterBlock:
    offset: int
    expand: np.ndarray

    @property
    def size(self) -> int:
        return self.expand.shape[1]

    @property
    def columns(self) -> slice:
        return slice(self.offset, self.offset + self.size)


class ParameterLayout:
    """Free parameters of a problem; cameras first, then lines.

    Each block maps its free coordinates onto the full 12 (camera) or 4 (line)
    perturbation through an expansion matrix, which is how gauge fixing,
    the scale fix and velocity freezing remove columns.
    """

    def __init__(self, problem: BaProblem, cameras: Sequence[RsCamera], velocity_free: bool = True):
        self.problem = problem
        self.velocity_free = velocity_free
        gauge = problem.gauge
        offset = 0

        # scale is the scale camera's distance to the first fixed camera
        self.anchor = cameras[gauge.fixed_camera_ids[0]].center if gauge.fixed_camera_ids else np.zeros(3)
        self.baseline = 0.0
        self.scale_camera: Optional[int] = None
        self.free_velocity: List[bool] = []
        self.camera_blocks: List[Optional[ParameterBlock]] = []
        for index, cam in enumerate(cameras):
            expand = self._camera_expansion(index, cam, gauge)
            if expand.shape[1] == 0:
                self.camera_blocks.append(None)
                continue
            self.camera_blocks.append(ParameterBlock(offset, expand))
            offset += expand.shape[1]
        self.num_camera_params = offset

        self.fixed_line: Optional[int] = None
        self.line_blocks: List[ParameterBlock] = []
        for index in range(problem.num_lines):
            expand = np.eye(LINE_DOF)
            if gauge.scale_fix == ScaleFix.FIX_LINE and index == gauge.scale_line_id:
                self.fixed_line = index
                expand = expand[:, :3]
            self.line_blocks.append(ParameterBlock(offset, expand))
            offset += expand.shape[1]
        self.num_params = offset

    def _camera_expansion(self, index: int, cam: RsCamera, gauge: GaugeSpec) -> np.ndarray:
        identity = np.eye(CAMERA_DOF)
        fixed = index in gauge.fixed_camera_ids
        keep_pose = not fixed
        keep_velocity = self.velocity_free and not (fixed and gauge.fix_velocity)
        self.free_velocity.append(keep_velocity)

        columns = []
        if keep_pose:
            offset = cam.center - self.anchor
            if (gauge.scale_fix == ScaleFix.FIX_SECOND_TRANSLATION_NORM
                    and index == gauge.scale_camera_id
                    and np.linalg.norm(offset) > 1e-12):
                self.scale_camera = index
                self.baseline = float(np.linalg.norm(offset))
                # rotation about the centre, centre sliding on the sphere around the anchor
                columns.append(identity[:, 0:3] - identity[:, 3:6] @ skew(cam.t0))
                columns.append(identity[:, 3:6] @ tangent_basis(cam.R0 @ offset))
            else:
                columns.append(identity[:, 0:3])
                columns.append(identity[:, 3:6])
        if keep_velocity:
            columns.append(identity[:, 6:12])
        if not columns:
            return np.zeros((CAMERA_DOF, 0))
        return np.hstack(columns)

    @property
    def line_block_sizes(self) -> List[int]:
        return [block.size for block in self.line_blocks]

    def column_scales(self, cameras: Sequence[RsCamera]) -> np.ndarray:
        """Natural size of one unit of each free column (velocities are per row)"""
        scales = np.ones(self.num_params)
        for cam, block in zip(cameras, self.camera_blocks):
            if block is None:
                continue
            per_dof = np.ones(CAMERA_DOF)
            per_dof[6:] = 1.0 / cam.height
            scales[block.columns] = (np.abs(block.expand) * per_dof[:, None]).max(axis=0)
        return scales

    def apply(self, cameras: Sequence[RsCamera], lines: Sequence[OrthonormalLine],
              delta: np.ndarray) -> Tuple[List[RsCamera], List[OrthonormalLine]]:
        new_cameras = []
        for index, (cam, block) in enumerate(zip(cameras, self.camera_blocks)):
            if block is None:
                new_cameras.append(cam)
                continue
            updated = apply_camera_delta(cam, block.expand @ delta[block.columns])
            if index == self.scale_camera:
                offset = updated.center - self.anchor
                centre = self.anchor + offset * (self.baseline / np.linalg.norm(offset))
                updated = updated.replace(t0=-updated.R0 @ centre)
            new_cameras.append(updated)
        new_lines = [update_orthonormal(tau, block.expand @ delta[block.columns])
                     for tau, block in zip(lines, self.line_blocks)]
        return new_cameras, new_lines


def parameter_norm(cameras: Sequence[RsCamera], lines: Sequence[OrthonormalLine]) -> float:
    """Size of the parameter vector; rotations and lines count as unit blocks"""
    total = float(len(lines))
    for cam in cameras:
        total += 1.0 + np.dot(cam.t0, cam.t0) + np.dot(cam.omega, cam.omega) + np.dot(cam.d, cam.d)
    return float(np.sqrt(total))


def evaluate_residuals(problem: BaProblem, cameras: Sequence[RsCamera],
                       lines: Sequence[OrthonormalLine]) -> Tuple[np.ndarray, np.ndarray]:
    coeff_mats = [coefficient_matrix(cam) for cam in cameras]
    plucker = [orthonormal_to_plucker(tau).vector for tau in lines]
    values, masks = [], []
    for obs in problem.observations:
        c = coeff_mats[obs.camera_id] @ plucker[obs.line_id]
        r, valid, _ = evaluate_rows(c, obs, problem.cfg)
        values.append(r)
        masks.append(valid)
    if not values:
        return np.zeros(0), np.zeros(0, dtype=bool)
    return np.concatenate(values), np.concatenate(masks)


def assemble_jacobian(problem: BaProblem, cameras: Sequence[RsCamera],
                      lines: Sequence[OrthonormalLine],
                      layout: ParameterLayout) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense residual vector, validity mask and Jacobian over the free parameters"""
    rows_per_sample = problem.cfg.rows_per_sample
    J = np.zeros((problem.num_residuals, layout.num_params))
    values = np.zeros(problem.num_residuals)
    valid = np.ones(problem.num_residuals, dtype=bool)
    start = 0
    for obs in problem.observations:
        block = residual_jacobian(cameras[obs.camera_id], lines[obs.line_id], obs, problem.cfg)
        stop = start + obs.num_samples * rows_per_sample
        values[start:stop] = block.values
        valid[start:stop] = block.valid
        cam_block = layout.camera_blocks[obs.camera_id]
        if cam_block is not None:
            J[start:stop, cam_block.columns] = block.d_camera @ cam_block.expand
        line_block = layout.line_blocks[obs.line_id]
        J[start:stop, line_block.columns] = block.d_line @ line_block.expand
        start = stop
    return values, valid, J
