"""Diagnostics for degenerate reconstructions: indeterminate tangents,
Gauss-Newton spectrum and structure-collapse scores."""

import logging
from typing import Optional, Sequence, Union

import numpy as np

from src.geometry.lines import orthonormal_to_plucker, plucker_to_orthonormal
from src.geometry.rs_camera import coefficient_matrix, curve_gradient
from src.models import DegeneracyReport, OrthonormalLine, PluckerLine, SolveReport, SolverMode
from src.optim.problem import BaProblem, ParameterLayout, assemble_jacobian
from src.optim.residuals import gradient_tolerance

logger = logging.getLogger(__name__)

FLATNESS_COLLAPSE = 0.01
COPLANARITY_COLLAPSE = 0.01
CONDITION_FLOOR = 1e-12


def _as_plucker(line: Union[PluckerLine, OrthonormalLine]) -> PluckerLine:
    if isinstance(line, OrthonormalLine):
        return orthonormal_to_plucker(line)
    return line


def indeterminate_fraction(problem: BaProblem, cameras, lines) -> float:
    """Fraction of samples where the curve gradient vanishes"""
    coeff_mats = [coefficient_matrix(cam) for cam in cameras]
    total, flagged = 0, 0
    for obs in problem.observations:
        c = coeff_mats[obs.camera_id] @ _as_plucker(lines[obs.line_id]).vector
        u, v = obs.q[:, 0], obs.q[:, 1]
        gu, gv = curve_gradient(c, u, v)
        flagged += int(np.count_nonzero(np.hypot(gu, gv) <= gradient_tolerance(c, u, v)))
        total += obs.num_samples
    return flagged / total if total else 0.0


def point_flatness(points) -> float:
    """sqrt(smallest / largest) principal variance of a point cloud"""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 2:
        return 0.0
    eigenvalues = np.linalg.eigvalsh(np.cov(points.T))
    largest = eigenvalues[-1]
    # coincident points up to rounding
    if largest <= 1e-24 * max(1.0, float(np.abs(points).max()) ** 2):
        return 0.0
    return float(np.sqrt(max(eigenvalues[0], 0.0) / largest))


def line_centre(lines: Sequence[PluckerLine]) -> np.ndarray:
    """Point with the least summed squared distance to the lines (minimum norm if not unique)"""
    normal = np.zeros((3, 3))
    rhs = np.zeros(3)
    for line in lines:
        direction = line.unit_direction()
        projector = np.eye(3) - np.outer(direction, direction)
        normal += projector
        rhs += projector @ line.closest_point()
    return np.linalg.lstsq(normal, rhs, rcond=None)[0]


def structure_flatness(lines: Sequence[Union[PluckerLine, OrthonormalLine]]) -> float:
    """Flatness of the lines' anchor points.

    Anchors are the points nearest the lines' common centre rather than the
    world origin, so the score does not move with a similarity of the world.
    """
    plucker = [_as_plucker(line) for line in lines]
    if not plucker:
        return 0.0
    centre = line_centre(plucker)
    return point_flatness([line.closest_point(centre) for line in plucker])


def line_coplanarity(lines: Sequence[PluckerLine]) -> float:
    """Smallest over middle extent of anchor points and anchors shifted along each direction"""
    points = []
    for line in lines:
        anchor = line.closest_point()
        points.extend([anchor, anchor + line.unit_direction()])
    points = np.array(points)
    singular = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if singular[1] <= 0:
        return 0.0
    return float(singular[2] / singular[1])


def normal_matrix_spectrum(problem: BaProblem, cameras, lines, count: int = 6):
    """Smallest eigenvalues of the column-normalised Gauss-Newton matrix and min/max ratio"""
    layout = ParameterLayout(problem, cameras, problem.mode == SolverMode.RS)
    ortho = [line if isinstance(line, OrthonormalLine) else plucker_to_orthonormal(line)
             for line in lines]
    _, _, J = assemble_jacobian(problem, cameras, ortho, layout)
    H = J.T @ J
    diag = np.diag(H)
    scale = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 0.0)
    eigenvalues = np.linalg.eigvalsh(scale[:, None] * H * scale[None, :])
    largest = eigenvalues[-1] if len(eigenvalues) else 0.0
    ratio = float(eigenvalues[0] / largest) if largest > 0 else 0.0
    return [float(x) for x in eigenvalues[:count]], ratio


def degeneracy_probe(problem: BaProblem, solution: Optional[Union[SolveReport, tuple]] = None) -> DegeneracyReport:
    """Degeneracy indicators at a solution (defaults to the problem's own state)."""
    if solution is None:
        cameras, lines = problem.cameras, problem.lines
    elif isinstance(solution, SolveReport):
        cameras, lines = solution.cameras, solution.lines
    else:
        cameras, lines = solution
    plucker = [_as_plucker(line) for line in lines]

    fraction = indeterminate_fraction(problem, cameras, plucker)
    smallest, ratio = normal_matrix_spectrum(problem, cameras, lines)
    flatness = structure_flatness(plucker)
    coplanarity = line_coplanarity(plucker)

    flags = []
    if fraction > 0:
        flags.append('tangent_indeterminate')
    if flatness < FLATNESS_COLLAPSE:
        flags.append('flatness_collapse')
    if coplanarity < COPLANARITY_COLLAPSE:
        flags.append('coplanar_structure')
    if ratio < CONDITION_FLOOR:
        flags.append('ill_conditioned')
    if flags:
        logger.info("degeneracy flags: %s", ", ".join(flags))

    return DegeneracyReport(
        indeterminate_fraction=fraction,
        smallest_eigenvalues=smallest,
        eigen_ratio=ratio,
        flatness=flatness,
        coplanarity=coplanarity,
        num_samples=problem.num_samples,
        flags=flags,
    )
