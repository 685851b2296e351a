"""Accuracy of a reconstruction against ground truth: per-camera rotation and
translation angles, per-line direction and distance errors, and the
absolute trajectory error after a least-squares similarity alignment."""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import LengthMismatch
from src.geometry.lines import orthonormal_to_plucker
from src.models import EvalReport, OrthonormalLine, ParameterSet, PluckerLine, SolveReport

PARALLEL_TOL = 1e-10
NORM_TOL = 1e-12


def _clamped_arccos(x: float) -> float:
    return float(np.arccos(np.clip(x, -1.0, 1.0)))


def rotation_error(Rg: np.ndarray, Rd: np.ndarray) -> float:
    """Angle of Rg^T Rd in radians"""
    return _clamped_arccos((np.trace(np.asarray(Rg).T @ np.asarray(Rd)) - 1.0) / 2.0)


def translation_error(tg, td) -> Optional[float]:
    """Angle between translations, None when either is (near) zero"""
    tg, td = np.asarray(tg, dtype=float), np.asarray(td, dtype=float)
    norm_g, norm_d = np.linalg.norm(tg), np.linalg.norm(td)
    if norm_g <= NORM_TOL or norm_d <= NORM_TOL:
        return None
    return _clamped_arccos(np.dot(tg, td) / (norm_g * norm_d))


def line_direction_error(ag, ad) -> float:
    """Angle between directions folded into [0, pi/2], since line signs are arbitrary"""
    ag, ad = np.asarray(ag, dtype=float), np.asarray(ad, dtype=float)
    theta = _clamped_arccos(np.dot(ag, ad) / (np.linalg.norm(ag) * np.linalg.norm(ad)))
    return min(theta, np.pi - theta)


def line_distance_error(Lg: PluckerLine, Ld: PluckerLine) -> float:
    """Distance between two lines; point-to-line distance when they are parallel"""
    ag, ad = Lg.unit_direction(), Ld.unit_direction()
    Pg, Pd = Lg.closest_point(), Ld.closest_point()
    cross = np.cross(ag, ad)
    norm = np.linalg.norm(cross)
    if norm > PARALLEL_TOL:
        return float(abs(np.dot(cross, Pd - Pg)) / norm)
    offset = Pd - Pg
    return float(np.linalg.norm(offset - np.dot(offset, ag) * ag))


def align_similarity(est: np.ndarray, gt: np.ndarray, with_scale: bool = True) -> Tuple[float, np.ndarray, np.ndarray]:
    """Closed-form (scale, R, t) minimising sum |gt_i - (s R est_i + t)|^2"""
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    mean_est, mean_gt = est.mean(axis=0), gt.mean(axis=0)
    est_c, gt_c = est - mean_est, gt - mean_gt

    cov = gt_c.T @ est_c / len(est)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt

    scale = 1.0
    if with_scale:
        variance_est = np.mean(np.sum(est_c ** 2, axis=1))
        if variance_est > 0:
            scale = float(np.trace(np.diag(D) @ S) / variance_est)
    t = mean_gt - scale * R @ mean_est
    return scale, R, t


def trajectory_errors(traj_est, traj_gt, with_scale: bool = True) -> np.ndarray:
    """Per-camera centre distances after alignment"""
    est = np.asarray(traj_est, dtype=float).reshape(-1, 3)
    gt = np.asarray(traj_gt, dtype=float).reshape(-1, 3)
    if len(est) != len(gt):
        raise LengthMismatch(f"trajectories have {len(est)} and {len(gt)} cameras")
    if len(est) < 2:
        raise LengthMismatch("at least two cameras are needed to align trajectories")
    scale, R, t = align_similarity(est, gt, with_scale)
    aligned = scale * est @ R.T + t
    return np.linalg.norm(aligned - gt, axis=1)


def ate_median(traj_est, traj_gt, with_scale: bool = True) -> float:
    return float(np.median(trajectory_errors(traj_est, traj_gt, with_scale)))


def ate_max(traj_est, traj_gt, with_scale: bool = True) -> float:
    return float(np.max(trajectory_errors(traj_est, traj_gt, with_scale)))


def _plucker(line: Union[PluckerLine, OrthonormalLine]) -> PluckerLine:
    return orthonormal_to_plucker(line) if isinstance(line, OrthonormalLine) else line


def evaluate(estimate: Union[ParameterSet, SolveReport], truth: ParameterSet,
             with_scale: bool = True) -> EvalReport:
    """Compare an estimate with the ground truth, camera by camera and line by line"""
    if len(estimate.cameras) != len(truth.cameras):
        raise LengthMismatch(f"{len(estimate.cameras)} estimated cameras vs {len(truth.cameras)} true ones")
    if len(estimate.lines) != len(truth.lines):
        raise LengthMismatch(f"{len(estimate.lines)} estimated lines vs {len(truth.lines)} true ones")

    rotation_err: List[float] = []
    translation_err: List[Optional[float]] = []
    for cam_g, cam_d in zip(truth.cameras, estimate.cameras):
        rotation_err.append(rotation_error(cam_g.R0, cam_d.R0))
        translation_err.append(translation_error(cam_g.t0, cam_d.t0))

    line_dir_err, line_dist_err = [], []
    for line_g, line_d in zip(truth.lines, estimate.lines):
        line_g, line_d = _plucker(line_g), _plucker(line_d)
        line_dir_err.append(line_direction_error(line_g.a, line_d.a))
        line_dist_err.append(line_distance_error(line_g, line_d))

    errors = trajectory_errors([cam.center for cam in estimate.cameras],
                               [cam.center for cam in truth.cameras], with_scale)
    return EvalReport(
        rotation_err=rotation_err,
        translation_err=translation_err,
        line_dir_err=line_dir_err,
        line_dist_err=line_dist_err,
        ate_median=float(np.median(errors)),
        ate_max=float(np.max(errors)),
    )


def median_report(reports: Sequence[EvalReport]) -> dict:
    """Medians over trials of the per-trial medians, in the noise-table columns"""
    def med(values):
        values = [v for v in values if v is not None and np.isfinite(v)]
        return float(np.median(values)) if values else float('nan')

    return {
        'rot': med([r.rotation_median for r in reports]),
        'trans': med([r.translation_median for r in reports]),
        'lr': med([r.line_dir_median for r in reports]),
        'ld': med([r.line_dist_median for r in reports]),
        'ate': med([r.ate_median for r in reports]),
    }
