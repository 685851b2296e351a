"""Curve reprojection errors: perpendicular distance, horizontal (u-axis)
distance and tangent misalignment, plus their stacked combinations.

Each sample contributes up to two rows, [distance, sqrt(lam) * tangent], so
the squared cost is e_d^2 + lam * e_t^2. Rows that hit a degenerate virtual
line or a vanishing curve gradient are flagged invalid rather than raised.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.exceptions import DegenerateVirtualLine, TangentIndeterminate, VerticalTangent
from src.geometry.rs_camera import (CoeffLike, _values, coefficient_matrix, curve_gradient,
                                    virtual_line_at_row)
from src.models import (InvalidPolicy, LineObservation, PluckerLine, ResidualConfig, RsCamera,
                        TangentMode)

DEGENERACY_RTOL = 1e-10


@dataclass
class ResidualBlock:
    values: np.ndarray
    valid: np.ndarray

    @property
    def cost(self) -> float:
        return float(np.dot(self.values, self.values))


def line_tolerance(c: np.ndarray, v) -> np.ndarray:
    return DEGENERACY_RTOL * np.abs(c).max() * (1.0 + np.abs(v))


def gradient_tolerance(c: np.ndarray, u, v) -> np.ndarray:
    return DEGENERACY_RTOL * np.abs(c).max() * (1.0 + np.abs(u) + np.abs(v))


def perpendicular_distance(c: CoeffLike, q) -> float:
    """Signed distance from q to the virtual line of its row"""
    c = _values(c)
    u, v = float(q[0]), float(q[1])
    l1, l2, l3 = virtual_line_at_row(c, v)
    rho = np.hypot(l1, l2)
    if rho <= line_tolerance(c, v):
        raise DegenerateVirtualLine(f"virtual line normal vanishes at row {v:.3f}")
    return float((l1 * u + l2 * v + l3) / rho)


def horizontal_distance(c: CoeffLike, q) -> float:
    """u - u', with u' the curve column at the sample's row"""
    c = _values(c)
    u, v = float(q[0]), float(q[1])
    l1, l2, l3 = virtual_line_at_row(c, v)
    if abs(l1) <= line_tolerance(c, v):
        raise VerticalTangent(f"virtual line is horizontal at row {v:.3f}")
    return float(u + (l2 * v + l3) / l1)


def tangent_error(c: CoeffLike, q, s_obs, mode: TangentMode = TangentMode.SINE) -> float:
    """Sign-invariant tangent misalignment: |sin| of the angle, or 1 - |cos|"""
    c = _values(c)
    u, v = float(q[0]), float(q[1])
    du, dv = curve_gradient(c, u, v)
    gnorm = np.hypot(du, dv)
    if gnorm <= gradient_tolerance(c, u, v):
        raise TangentIndeterminate(f"curve gradient vanishes at ({u:.3f}, {v:.3f})")
    su, sv = np.asarray(s_obs, dtype=float).reshape(2)
    if mode == TangentMode.LITERAL:
        return float(1.0 - abs(sv * du - su * dv) / gnorm)
    return float(abs(su * du + sv * dv) / gnorm)


def _coefficient_partials(u: np.ndarray, v: np.ndarray):
    zeros, ones = np.zeros_like(v), np.ones_like(v)
    d_iota = np.column_stack([v ** 3, u * v * v, v * v, v * v, u * v, v, v, u, ones])
    d_l1 = np.column_stack([zeros, v * v, zeros, zeros, v, zeros, zeros, ones, zeros])
    d_l2 = np.column_stack([v * v, zeros, v, zeros, zeros, ones, zeros, zeros, zeros])
    d_gv = np.column_stack([3 * v * v, 2 * u * v, 2 * v, 2 * v, u, ones, ones, zeros, zeros])
    return d_iota, d_l1, d_l2, d_gv


def distance_rows(c: np.ndarray, u: np.ndarray, v: np.ndarray, kind: str,
                  with_jacobian: bool = False):
    l1, l2, l3 = virtual_line_at_row(c, v)
    iota = l1 * u + l2 * v + l3
    tol = line_tolerance(c, v)
    d_iota, d_l1, d_l2, _ = _coefficient_partials(u, v)
    with np.errstate(divide='ignore', invalid='ignore'):
        if kind == "perp":
            rho = np.hypot(l1, l2)
            valid = rho > tol
            r = iota / rho
            jac = (d_iota / rho[:, None]
                   - (iota / rho ** 3)[:, None] * (l1[:, None] * d_l1 + l2[:, None] * d_l2))
        else:
            valid = np.abs(l1) > tol
            r = iota / l1
            jac = d_iota / l1[:, None] - (iota / l1 ** 2)[:, None] * d_l1
    return r, valid, (jac if with_jacobian else None)


def tangent_rows(c: np.ndarray, u: np.ndarray, v: np.ndarray, s: np.ndarray,
                 mode: TangentMode, with_jacobian: bool = False):
    gu, gv = curve_gradient(c, u, v)
    gnorm = np.hypot(gu, gv)
    valid = gnorm > gradient_tolerance(c, u, v)
    su, sv = s[:, 0], s[:, 1]
    _, d_gu, _, d_gv = _coefficient_partials(u, v)
    with np.errstate(divide='ignore', invalid='ignore'):
        if mode == TangentMode.LITERAL:
            p = (sv * gu - su * gv) / gnorm
            r = 1.0 - np.abs(p)
            sign = -np.sign(p)
            dr_dgu = sign * (sv / gnorm - p * gu / gnorm ** 2)
            dr_dgv = sign * (-su / gnorm - p * gv / gnorm ** 2)
        else:
            dot = su * gu + sv * gv
            r = dot / gnorm
            dr_dgu = su / gnorm - dot * gu / gnorm ** 3
            dr_dgv = sv / gnorm - dot * gv / gnorm ** 3
        jac = dr_dgu[:, None] * d_gu + dr_dgv[:, None] * d_gv
    return r, valid, (jac if with_jacobian else None)


def evaluate_rows(c: CoeffLike, obs: LineObservation, cfg: ResidualConfig,
                  with_jacobian: bool = False) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Residual rows of one observation against curve coefficients c.

    Returns (r, valid, dr/dc). Invalid rows are zeroed (mask policy) or set
    to the penalty (penalty policy); their derivative rows are always zero.
    """
    c = _values(c)
    u, v = obs.q[:, 0], obs.q[:, 1]
    columns, masks, present, jacobians = [], [], [], []

    kind = cfg.variant.distance_kind
    if kind is not None:
        r, valid, jac = distance_rows(c, u, v, kind, with_jacobian)
        columns.append(r)
        masks.append(valid)
        present.append(np.ones_like(valid))
        jacobians.append(jac)
    if cfg.variant.uses_tangent:
        r, valid, jac = tangent_rows(c, u, v, obs.s, cfg.tangent_mode, with_jacobian)
        weight = np.sqrt(cfg.lam)
        columns.append(weight * r)
        # samples without an observed tangent give a zero row, not an invalid one
        masks.append(valid | ~obs.has_tangent)
        present.append(obs.has_tangent)
        jacobians.append(weight * jac if with_jacobian else None)

    values = np.column_stack(columns).reshape(-1)
    valid = np.column_stack(masks).reshape(-1)
    present = np.column_stack(present).reshape(-1)
    fill = cfg.penalty if cfg.invalid_policy == InvalidPolicy.PENALTY else 0.0
    values = np.where(valid, values, fill)
    values[~present] = 0.0
    jac = None
    if with_jacobian:
        jac = np.stack(jacobians, axis=1).reshape(-1, 9)
        jac[~(valid & present)] = 0.0
    return values, valid, jac


def residual_block(cam: RsCamera, L: PluckerLine, obs: LineObservation,
                   cfg: ResidualConfig) -> ResidualBlock:
    c = coefficient_matrix(cam) @ L.vector
    values, valid, _ = evaluate_rows(c, obs, cfg)
    return ResidualBlock(values=values, valid=valid)


def huber_weights(r: np.ndarray, delta: Optional[float]) -> np.ndarray:
    """Square-root IRLS weights of the Huber kernel (1 inside, sqrt(delta/|r|) outside)"""
    if delta is None:
        return np.ones_like(r)
    magnitude = np.abs(r)
    with np.errstate(divide='ignore'):
        return np.where(magnitude <= delta, 1.0, np.sqrt(delta / magnitude))


def robust_cost(r: np.ndarray, delta: Optional[float]) -> float:
    if delta is None:
        return float(np.dot(r, r))
    magnitude = np.abs(r)
    per_row = np.where(magnitude <= delta, r * r, 2.0 * delta * magnitude - delta * delta)
    return float(per_row.sum())


def point_reprojection_residual(cam: RsCamera, X, q) -> np.ndarray:
    """(u - u', v - v') for a world point projected with the pose at the observed row"""
    X = np.asarray(X, dtype=float).reshape(3)
    u, v = float(q[0]), float(q[1])
    Xc = cam.R0 @ X
    p = cam.K @ (Xc + cam.t0 + v * (np.cross(cam.omega, Xc) + cam.d))
    return np.array([u - p[0] / p[2], v - p[1] / p[2]])


def point_horizontal_residual(cam: RsCamera, X, q) -> float:
    return float(point_reprojection_residual(cam, X, q)[0])
