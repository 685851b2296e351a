"""Rolling-shutter projection of points and lines.

Rows are counted in pixels from the top scanline, so omega and d are per-row
rates. Curves live in pixel coordinates because every projection carries K.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import DegenerateLine, DegenerateProjection, RowNotVisible, VerticalTangent
from src.geometry.lines import cofactor, line_motion_terms, skew
from src.models import CurveCoeffs, LineObservation, PluckerLine, RsCamera

logger = logging.getLogger(__name__)

# Coefficient indices (0-based c1..c9) of (l1, l2, l3) for powers v^0, v^1, v^2
ORDER_ROWS = ((7, 5, 8), (4, 2, 6), (1, 0, 3))

CoeffLike = Union[CurveCoeffs, np.ndarray, Sequence[float]]


def _values(c: CoeffLike) -> np.ndarray:
    if isinstance(c, CurveCoeffs):
        return c.values
    return np.asarray(c, dtype=float).reshape(9)


def check_camera(cam: RsCamera) -> None:
    K = cam.K
    if K[2, 2] != 1.0 or K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0:
        raise ValueError("K must be upper triangular with K[2][2] == 1")
    if K[0, 0] <= 0 or K[1, 1] <= 0:
        raise ValueError("focal lengths must be positive")
    if cam.height < 2 or cam.width < 2:
        raise ValueError(f"image must be at least 2x2, got {cam.width}x{cam.height}")
    if np.linalg.norm(cam.omega) * cam.height >= np.pi / 2:
        logger.warning("rotation over one frame is %.3f rad, beyond the linearised motion model",
                       np.linalg.norm(cam.omega) * cam.height)


def instantaneous_pose(cam: RsCamera, v: float) -> Tuple[np.ndarray, np.ndarray]:
    """(I + v[w]x) R0 and t0 + v d. The rotation part is not exactly orthogonal."""
    R = (np.eye(3) + v * skew(cam.omega)) @ cam.R0
    return R, cam.t0 + v * cam.d


def projection_matrices(cam: RsCamera) -> Tuple[np.ndarray, np.ndarray]:
    """P0 = K[R0, t0] and Q = K[[w]x R0, d], so that P_v = P0 + v Q"""
    P0 = cam.K @ np.column_stack([cam.R0, cam.t0])
    Q = cam.K @ np.column_stack([skew(cam.omega) @ cam.R0, cam.d])
    return P0, Q


def coefficient_matrix(cam: RsCamera) -> np.ndarray:
    """9x6 matrix G with curve coefficients c = G @ (n, a) for a world line."""
    cofK = cofactor(cam.K)
    G = np.zeros((9, 6))
    for rows, N in zip(ORDER_ROWS, line_motion_terms(cam)):
        G[list(rows), :] = cofK @ N[:3, :]
    return G


def curve_coefficients(cam: RsCamera, L: PluckerLine) -> CurveCoeffs:
    P0, Q = projection_matrices(cam)
    Lm = L.matrix()
    blocks = (
        P0 @ Lm @ P0.T,
        P0 @ Lm @ Q.T + Q @ Lm @ P0.T,
        Q @ Lm @ Q.T,
    )
    values = np.zeros(9)
    for rows, A in zip(ORDER_ROWS, blocks):
        anti = 0.5 * (A - A.T)
        sym = 0.5 * (A + A.T)
        size = np.abs(A).max()
        if size > 0 and np.abs(sym).max() > 1e-9 * size:
            logger.warning("projected Plücker block has a symmetric part of %.3e", np.abs(sym).max())
        values[list(rows)] = (anti[2, 1], anti[0, 2], anti[1, 0])

    reference = np.linalg.norm(P0) ** 2 * np.linalg.norm(L.vector)
    if np.abs(values).max() <= 1e-12 * reference:
        raise DegenerateProjection("all curve coefficients vanish for this camera and line")
    return CurveCoeffs(values)


def virtual_line_at_row(c: CoeffLike, v):
    """Instantaneous image line (l1, l2, l3) at row v"""
    c1, c2, c3, c4, c5, c6, c7, c8, c9 = _values(c)
    l1 = c8 + v * c5 + v * v * c2
    l2 = c6 + v * c3 + v * v * c1
    l3 = c9 + v * c7 + v * v * c4
    return l1, l2, l3


def curve_value(c: CoeffLike, u, v):
    c1, c2, c3, c4, c5, c6, c7, c8, c9 = _values(c)
    return (c1 * v ** 3 + c2 * u * v * v + (c3 + c4) * v * v + c5 * u * v
            + (c6 + c7) * v + c8 * u + c9)


def curve_gradient(c: CoeffLike, u, v):
    c1, c2, c3, c4, c5, c6, c7, c8, c9 = _values(c)
    du = c2 * v * v + c5 * v + c8
    dv = 3.0 * c1 * v * v + 2.0 * c2 * u * v + 2.0 * (c3 + c4) * v + c5 * u + (c6 + c7)
    return du, dv


def curve_monomials(u: float, v: float) -> np.ndarray:
    """Row m with curve_value(c, u, v) == m @ c"""
    return np.array([v ** 3, u * v * v, v * v, v * v, u * v, v, v, u, 1.0])


def oriented_tangent(du: float, dv: float) -> np.ndarray:
    """Unit tangent perpendicular to the gradient, v-component positive when possible"""
    tangent = np.array([-dv, du], dtype=float)
    tangent /= np.linalg.norm(tangent)
    if tangent[1] < 0 or (tangent[1] == 0 and tangent[0] < 0):
        tangent = -tangent
    return tangent


def project_line_to_samples(cam: RsCamera, L: PluckerLine, rows,
                            strict: bool = False) -> List[Tuple[float, float, np.ndarray]]:
    """Sample the projected curve at the given rows.

    Rows whose sample leaves the image or whose virtual line is horizontal are
    dropped (and logged); with ``strict`` they raise instead.
    """
    c = coefficient_matrix(cam) @ L.vector
    scale = np.abs(c).max()
    samples = []
    for v in np.asarray(rows, dtype=float).reshape(-1):
        l1, l2, l3 = virtual_line_at_row(c, v)
        if abs(l1) <= 1e-10 * scale * (1.0 + abs(v)):
            if strict:
                raise VerticalTangent(f"virtual line is horizontal at row {v:.3f}")
            logger.debug("dropping row %.3f: horizontal virtual line", v)
            continue
        u = -(l2 * v + l3) / l1
        if not 0.0 <= u < cam.width:
            if strict:
                raise RowNotVisible(f"sample u={u:.3f} at row {v:.3f} is outside the image")
            logger.debug("dropping row %.3f: u=%.3f outside the image", v, u)
            continue
        du, dv = curve_gradient(c, u, v)
        samples.append((float(u), float(v), oriented_tangent(du, dv)))
    return samples


def gs_line_projection(R: np.ndarray, t: np.ndarray, K: np.ndarray, L: PluckerLine) -> np.ndarray:
    """Image line l with [l]x = (K[R, t]) L (K[R, t])^T"""
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float).reshape(3)
    n_cam = R @ L.n + np.cross(t, R @ L.a)
    if np.linalg.norm(n_cam) <= 1e-12 * np.linalg.norm(L.vector) * (1.0 + np.linalg.norm(t)):
        raise DegenerateProjection("line passes through the camera centre")
    return cofactor(K) @ n_cam


def project_point_rs(cam: RsCamera, X) -> Optional[Tuple[float, float]]:
    """Pixel of a world point under the RS model, or None if it is behind the camera.

    The row is the root of p1z v^2 + (p0z - p1y) v - p0y = 0 closest to the
    global-shutter row, where p(v) = p0 + v p1.
    """
    X = np.asarray(X, dtype=float).reshape(3)
    Xc = cam.R0 @ X
    p0 = cam.K @ (Xc + cam.t0)
    p1 = cam.K @ (np.cross(cam.omega, Xc) + cam.d)
    if p0[2] <= 0:
        return None
    v_gs = p0[1] / p0[2]
    a, b, c = p1[2], p0[2] - p1[1], -p0[1]
    if abs(a) < 1e-15 * max(abs(b), 1.0):
        if abs(b) < 1e-300:
            return None
        v = -c / b
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0:
            return None
        q = -0.5 * (b + np.copysign(np.sqrt(disc), b))
        candidates = [q / a]
        if q != 0:
            candidates.append(c / q)
        v = min(candidates, key=lambda r: abs(r - v_gs))
    p = p0 + v * p1
    if p[2] <= 0:
        return None
    return float(p[0] / p[2]), float(v)


def triangulate_line(cameras: Sequence[RsCamera], observations: Sequence[LineObservation]) -> PluckerLine:
    """Linear estimate of one line from its curve samples in known cameras.

    Every sample gives one row m(u, v)^T G of a homogeneous system in (n, a).
    Rows are normalised, the smallest right singular vector is taken and its
    moment is projected back onto the Klein quadric. With two global-shutter
    views the null space is two-dimensional, so three views are required.
    """
    rows = []
    for obs in observations:
        G = coefficient_matrix(cameras[obs.camera_id])
        for u, v in obs.q:
            row = curve_monomials(u, v) @ G
            norm = np.linalg.norm(row)
            if norm > 0:
                rows.append(row / norm)
    views = len({obs.camera_id for obs in observations})
    if views < 3 or len(rows) < 5:
        raise DegenerateLine(f"{len(rows)} samples in {views} cameras do not fix a line")
    vector = np.linalg.svd(np.array(rows))[2][-1]
    n, a = vector[:3], vector[3:]
    if np.linalg.norm(a) < 1e-9:
        raise DegenerateLine("triangulated line lies at infinity")
    direction = a / np.linalg.norm(a)
    return PluckerLine(n=n - np.dot(n, direction) * direction, a=a)
