"""Plücker and orthonormal line representations, rotation helpers and the
row-dependent world-to-camera line transform of a rolling-shutter frame."""

from typing import Tuple

import numpy as np
from scipy.linalg import polar

from src.exceptions import CoincidentPoints, DegenerateLine
from src.models import OrthonormalLine, PluckerLine, RsCamera

SMALL_ANGLE = 1e-8


def skew(vec) -> np.ndarray:
    """Skew-symmetric matrix with skew(x) @ y == cross(x, y)"""
    x, y, z = np.asarray(vec, dtype=float).reshape(3)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def so3_exp(psi) -> np.ndarray:
    """Rodrigues formula, with a second-order Taylor branch near zero"""
    psi = np.asarray(psi, dtype=float).reshape(3)
    angle = np.linalg.norm(psi)
    S = skew(psi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + S + 0.5 * S @ S
    one_minus_cos = 2.0 * np.sin(angle / 2.0) ** 2
    return np.eye(3) + np.sin(angle) / angle * S + one_minus_cos / angle ** 2 * S @ S


def rot2(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def cofactor(M: np.ndarray) -> np.ndarray:
    """Cofactor matrix det(M) M^-T, defined for singular M too"""
    r1, r2, r3 = np.asarray(M, dtype=float)
    return np.array([np.cross(r2, r3), np.cross(r3, r1), np.cross(r1, r2)])


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor of M, sign-fixed to det +1"""
    Q, _ = polar(np.asarray(M, dtype=float))
    if np.linalg.det(Q) < 0:
        Q = -Q
    return Q


def orthogonal_unit(x: np.ndarray) -> np.ndarray:
    # basis vector least aligned with x
    e = np.zeros(3)
    e[int(np.argmin(np.abs(x)))] = 1.0
    y = np.cross(x, e)
    return y / np.linalg.norm(y)


def plucker_from_points(Pa, Pb) -> PluckerLine:
    """Line through two homogeneous points; direction Pa - Pb, moment Pb x Pa."""
    Pa = np.asarray(Pa, dtype=float).reshape(-1)
    Pb = np.asarray(Pb, dtype=float).reshape(-1)
    if len(Pa) == 4:
        Pa = Pa[:3] / Pa[3]
    if len(Pb) == 4:
        Pb = Pb[:3] / Pb[3]
    if np.linalg.norm(Pa - Pb) < 1e-12:
        raise CoincidentPoints(f"points {Pa.tolist()} and {Pb.tolist()} coincide")
    return PluckerLine(n=np.cross(Pb, Pa), a=Pa - Pb)


def plucker_to_orthonormal(L: PluckerLine) -> OrthonormalLine:
    n, a = L.n, L.a
    norm_n, norm_a = np.linalg.norm(n), np.linalg.norm(a)
    scale = max(norm_n, norm_a)
    if scale < 1e-12:
        raise DegenerateLine("Plücker vector is zero")

    if norm_a <= 1e-12 * scale:
        u1 = n / norm_n
        u2 = orthogonal_unit(u1)
    elif norm_n <= 1e-12 * scale:
        # line through the origin
        u2 = a / norm_a
        u1 = orthogonal_unit(u2)
    else:
        u1 = n / norm_n
        u2 = a - np.dot(a, u1) * u1
        u2 = u2 / np.linalg.norm(u2)
    U = np.column_stack([u1, u2, np.cross(u1, u2)])

    radius = np.hypot(norm_n, norm_a)
    w1, w2 = norm_n / radius, norm_a / radius
    W = np.array([[w1, -w2], [w2, w1]])
    return OrthonormalLine(U=U, W=W)


def orthonormal_to_plucker(tau: OrthonormalLine) -> PluckerLine:
    return PluckerLine(n=tau.w1 * tau.U[:, 0], a=tau.w2 * tau.U[:, 1])


def update_orthonormal(tau: OrthonormalLine, delta) -> OrthonormalLine:
    """Right-multiplicative update U <- U Exp(dpsi), W <- W Rot2(dphi)"""
    delta = np.asarray(delta, dtype=float).reshape(4)
    return OrthonormalLine(U=tau.U @ so3_exp(delta[:3]), W=tau.W @ rot2(delta[3]))


def reorthonormalize(tau: OrthonormalLine) -> OrthonormalLine:
    return OrthonormalLine(U=nearest_rotation(tau.U), W=nearest_rotation(tau.W))


def line_motion_terms(cam: RsCamera) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Polynomial terms N0, N1, N2 of the row-dependent line transform.

    The camera-frame line at row v is (N0 + v N1 + v^2 N2) L_w, exact for the
    linearised motion R(v) = (I + v[w]x) R0, t(v) = t0 + v d: the moment uses
    the cofactor of (I + v[w]x), which is I + v[w]x + v^2 w w^T.
    """
    R0, t0, omega, d = cam.R0, cam.t0, cam.omega, cam.d
    Wx = skew(omega)
    Tx = skew(t0)
    Dx = skew(d)
    WR = Wx @ R0

    N0 = np.zeros((6, 6))
    N0[:3, :3] = R0
    N0[:3, 3:] = Tx @ R0
    N0[3:, 3:] = R0

    N1 = np.zeros((6, 6))
    N1[:3, :3] = WR
    N1[:3, 3:] = Tx @ WR + Dx @ R0
    N1[3:, 3:] = WR

    N2 = np.zeros((6, 6))
    N2[:3, :3] = np.outer(omega, omega) @ R0
    N2[:3, 3:] = Dx @ WR
    return N0, N1, N2


def transform_line_to_camera(Lw: PluckerLine, cam: RsCamera, v: float) -> PluckerLine:
    N0, N1, N2 = line_motion_terms(cam)
    N = N0 + v * N1 + v * v * N2
    return PluckerLine.from_vector(N @ Lw.vector)
