"""Analytic derivatives of the curve residuals.

Camera parameters are ordered (dtheta, t0, omega, d), twelve in total, with
the rotation perturbed on the left, R0 <- Exp(dtheta) R0, and everything else
additive. Lines are perturbed with the right-multiplicative orthonormal update.

The chain runs residual -> nine curve coefficients -> (camera | line). The
coefficients are polynomial in the row, so each camera derivative is assembled
from the three row-power terms of the line transform.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.geometry.lines import (cofactor, line_motion_terms, orthonormal_to_plucker, skew,
                                so3_exp)
from src.geometry.rs_camera import ORDER_ROWS, coefficient_matrix
from src.models import LineObservation, OrthonormalLine, PluckerLine, ResidualConfig, RsCamera
from src.optim.residuals import evaluate_rows

CAMERA_DOF = 12
LINE_DOF = 4


@dataclass
class ResidualJacobianRow:
    d_pose: np.ndarray
    d_velocity: np.ndarray
    d_line: np.ndarray
    validity: bool


@dataclass
class BlockJacobian:
    """Residual rows of one observation with their camera and line derivatives"""
    values: np.ndarray
    valid: np.ndarray
    d_camera: np.ndarray
    d_line: np.ndarray

    def rows(self) -> List[ResidualJacobianRow]:
        return [
            ResidualJacobianRow(d_pose=cam[:6], d_velocity=cam[6:], d_line=line, validity=bool(ok))
            for cam, line, ok in zip(self.d_camera, self.d_line, self.valid)
        ]


def apply_camera_delta(cam: RsCamera, delta) -> RsCamera:
    delta = np.asarray(delta, dtype=float).reshape(CAMERA_DOF)
    return cam.replace(
        R0=so3_exp(delta[0:3]) @ cam.R0,
        t0=cam.t0 + delta[3:6],
        omega=cam.omega + delta[6:9],
        d=cam.d + delta[9:12],
    )


def relative_camera(cam: RsCamera) -> RsCamera:
    """Same motion expressed from the row-0 camera frame (R0 = I, t0 = 0)"""
    return cam.replace(R0=np.eye(3), t0=np.zeros(3), d=cam.d - np.cross(cam.omega, cam.t0))


def d_curvecoeffs_d_linecam(cam: RsCamera) -> np.ndarray:
    """9x6 derivative of the curve coefficients with respect to the camera-frame line.

    The camera-frame line is taken at row 0; the map is linear, so the result
    depends on the camera only.
    """
    return coefficient_matrix(relative_camera(cam))


def pose_jacobian_terms(cam: RsCamera, Lw: PluckerLine) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-power terms D0, D1, D2 (each 6x12) of d(camera-frame line)/d(camera)"""
    R0, t0, omega, d = cam.R0, cam.t0, cam.omega, cam.d
    nR, aR = R0 @ Lw.n, R0 @ Lw.a
    Sn, Sa = skew(nR), skew(aR)
    Wx, Tx, Dx = skew(omega), skew(t0), skew(d)
    WaR = skew(np.cross(omega, aR))

    D0 = np.zeros((6, 12))
    D1 = np.zeros((6, 12))
    D2 = np.zeros((6, 12))

    # rotation
    D0[:3, 0:3] = -Sn - Tx @ Sa
    D0[3:, 0:3] = -Sa
    D1[:3, 0:3] = -Wx @ Sn - Tx @ Wx @ Sa - Dx @ Sa
    D1[3:, 0:3] = -Wx @ Sa
    D2[:3, 0:3] = -np.outer(omega, omega) @ Sn - Dx @ Wx @ Sa

    # translation
    D0[:3, 3:6] = -Sa
    D1[:3, 3:6] = -WaR

    # angular velocity
    D1[:3, 6:9] = -Sn - Tx @ Sa
    D1[3:, 6:9] = -Sa
    D2[:3, 6:9] = np.dot(omega, nR) * np.eye(3) + np.outer(omega, nR) - Dx @ Sa

    # linear velocity: v times the translation block
    D1[:3, 9:12] = -Sa
    D2[:3, 9:12] = -WaR
    return D0, D1, D2


def d_linecam_d_pose(cam: RsCamera, Lw: PluckerLine, v: float) -> np.ndarray:
    """6x12 derivative of the camera-frame line at row v"""
    D0, D1, D2 = pose_jacobian_terms(cam, Lw)
    return D0 + v * D1 + v * v * D2


def d_curvecoeffs_d_camera(cam: RsCamera, Lw: PluckerLine) -> np.ndarray:
    """9x12 derivative of the curve coefficients with respect to the camera"""
    cofK = cofactor(cam.K)
    J = np.zeros((9, CAMERA_DOF))
    for rows, D in zip(ORDER_ROWS, pose_jacobian_terms(cam, Lw)):
        J[list(rows), :] = cofK @ D[:3, :]
    return J


def d_linew_d_tau(tau: OrthonormalLine) -> np.ndarray:
    """6x4 derivative of the Plücker vector under the orthonormal update"""
    U1, U2, U3 = tau.U[:, 0], tau.U[:, 1], tau.U[:, 2]
    w1, w2 = tau.w1, tau.w2
    J = np.zeros((6, LINE_DOF))
    J[:3, 1] = -w1 * U3
    J[:3, 2] = w1 * U2
    J[:3, 3] = -w2 * U1
    J[3:, 0] = w2 * U3
    J[3:, 2] = -w2 * U1
    J[3:, 3] = w1 * U2
    return J


def d_residual_d_coeffs(cfg: ResidualConfig, c, q, s_obs) -> np.ndarray:
    """Derivative rows (one per residual row of the sample) with respect to c1..c9"""
    obs = LineObservation(camera_id=0, line_id=0, q=[q], s=[s_obs])
    _, _, jac = evaluate_rows(c, obs, cfg, with_jacobian=True)
    return jac


def residual_jacobian(cam: RsCamera, tau: OrthonormalLine, obs: LineObservation,
                      cfg: ResidualConfig) -> BlockJacobian:
    """Residual rows of an observation and their full chain-rule derivatives.

    The sample row v is an observed constant, so nothing flows through it.
    """
    Lw = orthonormal_to_plucker(tau)
    G = coefficient_matrix(cam)
    c = G @ Lw.vector
    values, valid, dr_dc = evaluate_rows(c, obs, cfg, with_jacobian=True)
    d_camera = dr_dc @ d_curvecoeffs_d_camera(cam, Lw)
    d_line = dr_dc @ G @ d_linew_d_tau(tau)
    return BlockJacobian(values=values, valid=valid, d_camera=d_camera, d_line=d_line)


def numeric_jacobian(func: Callable[[np.ndarray], np.ndarray], x, step: Optional[float] = None) -> np.ndarray:
    """Central differences, step h = 1e-6 max(1, |x_j|) unless given"""
    x = np.asarray(x, dtype=float).reshape(-1)
    f0 = np.atleast_1d(func(x))
    jac = np.zeros((len(f0), len(x)))
    for j in range(len(x)):
        h = step if step is not None else 1e-6 * max(1.0, abs(x[j]))
        x_plus, x_minus = x.copy(), x.copy()
        x_plus[j] += h
        x_minus[j] -= h
        jac[:, j] = (np.atleast_1d(func(x_plus)) - np.atleast_1d(func(x_minus))) / (2.0 * h)
    return jac


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm discrepancy relative to the block magnitude, absolute below ``floor``"""
    diff = np.abs(np.asarray(analytic) - np.asarray(numeric)).max(initial=0.0)
    size = np.abs(numeric).max(initial=0.0)
    if diff <= floor:
        return 0.0
    return float(diff / max(size, floor))
