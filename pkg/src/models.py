from dataclasses import dataclass, field, replace
from typing import List, Dict, Optional, Any, Tuple
from enum import Enum

import numpy as np


class ResidualVariant(Enum):
    E1_PERP_TANGENT = "e1_perp_tangent"
    E2_HORIZ_TANGENT = "e2_horiz_tangent"
    PERP_ONLY = "perp_only"
    HORIZ_ONLY = "horiz_only"
    TANGENT_ONLY = "tangent_only"

    @property
    def distance_kind(self) -> Optional[str]:
        if self in (ResidualVariant.E1_PERP_TANGENT, ResidualVariant.PERP_ONLY):
            return "perp"
        if self in (ResidualVariant.E2_HORIZ_TANGENT, ResidualVariant.HORIZ_ONLY):
            return "horiz"
        return None

    @property
    def uses_tangent(self) -> bool:
        return self in (ResidualVariant.E1_PERP_TANGENT,
                        ResidualVariant.E2_HORIZ_TANGENT,
                        ResidualVariant.TANGENT_ONLY)


class InvalidPolicy(Enum):
    MASK = "mask"
    PENALTY = "penalty"


class TangentMode(Enum):
    SINE = "sine"
    LITERAL = "literal"


class SolverMode(Enum):
    RS = "rs"
    GS_FROZEN = "gs_frozen"


class ScaleFix(Enum):
    FIX_SECOND_TRANSLATION_NORM = "fix_second_translation_norm"
    FIX_LINE = "fix_line"
    NONE = "none"


class Termination(Enum):
    GRADIENT_TOL = "gradient_tol"
    STEP_TOL = "step_tol"
    MAX_ITER = "max_iter"
    STALL = "stall"


class TrajectoryKind(Enum):
    RING = "ring"
    LINEAR = "linear"
    XY_TRANSLATION = "xy_translation"


class NoiseMode(Enum):
    SAMPLES = "samples"
    ENDPOINTS = "endpoints"


class DegeneracyKind(Enum):
    PLANE = "plane"
    TWO_VIEW_TRANSLATION = "two_view_translation"
    XY_TRANSLATION = "xy_translation"


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


@dataclass(frozen=True, eq=False)
class PluckerLine:
    """3D line as moment n and direction a, defined up to scale."""
    n: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'n', _vec(self.n))
        object.__setattr__(self, 'a', _vec(self.a))

    @classmethod
    def from_vector(cls, vec) -> 'PluckerLine':
        vec = _vec(vec)
        return cls(n=vec[:3], a=vec[3:6])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.n, self.a])

    def klein(self) -> float:
        """n . a after scaling to unit 6-norm"""
        scale = np.dot(self.vector, self.vector)
        return float(np.dot(self.n, self.a) / scale) if scale > 0 else 0.0

    def scaled(self, factor: float) -> 'PluckerLine':
        return PluckerLine(self.n * factor, self.a * factor)

    def canonical(self) -> 'PluckerLine':
        vec = self.vector
        norm = np.linalg.norm(vec)
        if norm == 0:
            return self
        vec = vec / norm
        direction = vec[3:]
        nonzero = np.flatnonzero(np.abs(direction) > 1e-12)
        pivot = direction[nonzero[0]] if len(nonzero) else vec[np.flatnonzero(vec)[0]]
        if pivot < 0:
            vec = -vec
        return PluckerLine.from_vector(vec)

    def is_close(self, other: 'PluckerLine', atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.canonical().vector, other.canonical().vector, atol=atol))

    # Klein coordinates of the 4x4 Plücker matrix
    @property
    def l12(self) -> float:
        return float(-self.n[2])

    @property
    def l13(self) -> float:
        return float(self.n[1])

    @property
    def l23(self) -> float:
        return float(-self.n[0])

    @property
    def l14(self) -> float:
        return float(self.a[0])

    @property
    def l24(self) -> float:
        return float(self.a[1])

    @property
    def l34(self) -> float:
        return float(self.a[2])

    def matrix(self) -> np.ndarray:
        """Antisymmetric 4x4 Plücker matrix [[n]x, a; -a^T, 0]"""
        n1, n2, n3 = self.n
        mat = np.zeros((4, 4))
        mat[:3, :3] = [[0.0, -n3, n2], [n3, 0.0, -n1], [-n2, n1, 0.0]]
        mat[:3, 3] = self.a
        mat[3, :3] = -self.a
        return mat

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> 'PluckerLine':
        mat = np.asarray(mat, dtype=float)
        n = np.array([mat[2, 1], mat[0, 2], mat[1, 0]])
        return cls(n=n, a=mat[:3, 3].copy())

    def closest_point(self, reference: Optional[np.ndarray] = None) -> np.ndarray:
        """Point of the line nearest ``reference`` (the origin by default)"""
        point = np.cross(self.a, self.n) / np.dot(self.a, self.a)
        if reference is None:
            return point
        direction = self.unit_direction()
        return point + np.dot(np.asarray(reference, dtype=float) - point, direction) * direction

    def unit_direction(self) -> np.ndarray:
        return self.a / np.linalg.norm(self.a)

    def to_dict(self) -> Dict[str, Any]:
        canon = self.canonical()
        return {'n': canon.n.tolist(), 'a': canon.a.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PluckerLine':
        return cls(n=data['n'], a=data['a'])


@dataclass(frozen=True, eq=False)
class OrthonormalLine:
    """Minimal line parameters: U in SO(3), W in SO(2)."""
    U: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'U', np.asarray(self.U, dtype=float).reshape(3, 3))
        object.__setattr__(self, 'W', np.asarray(self.W, dtype=float).reshape(2, 2))

    @property
    def w1(self) -> float:
        return float(self.W[0, 0])

    @property
    def w2(self) -> float:
        return float(self.W[1, 0])

    @property
    def phi(self) -> float:
        return float(np.arctan2(self.W[1, 0], self.W[0, 0]))


@dataclass(frozen=True, eq=False)
class RsCamera:
    """Rolling-shutter camera: intrinsics, pose at row 0 and per-row velocities.

    R0, t0 map world points into the camera frame at row 0. omega is in
    radians per row and d in scene units per row.
    """
    K: np.ndarray
    R0: np.ndarray
    t0: np.ndarray
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    height: int = 480
    width: int = 640

    def __post_init__(self):
        object.__setattr__(self, 'K', np.asarray(self.K, dtype=float).reshape(3, 3))
        object.__setattr__(self, 'R0', np.asarray(self.R0, dtype=float).reshape(3, 3))
        object.__setattr__(self, 't0', _vec(self.t0))
        object.__setattr__(self, 'omega', _vec(self.omega))
        object.__setattr__(self, 'd', _vec(self.d))

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates at row 0"""
        return -self.R0.T @ self.t0

    @property
    def is_static(self) -> bool:
        return not (np.any(self.omega) or np.any(self.d))

    def replace(self, **changes) -> 'RsCamera':
        return replace(self, **changes)

    def frozen_velocity(self) -> 'RsCamera':
        return replace(self, omega=np.zeros(3), d=np.zeros(3))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'K': self.K.reshape(-1).tolist(),
            'R0': self.R0.reshape(-1).tolist(),
            't0': self.t0.tolist(),
            'omega': self.omega.tolist(),
            'd': self.d.tolist(),
            'h': int(self.height),
            'w': int(self.width),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RsCamera':
        return cls(
            K=data['K'],
            R0=data['R0'],
            t0=data['t0'],
            omega=data.get('omega', [0.0, 0.0, 0.0]),
            d=data.get('d', [0.0, 0.0, 0.0]),
            height=int(data['h']),
            width=int(data['w']),
        )


@dataclass(frozen=True, eq=False)
class CurveCoeffs:
    """Nine coefficients c1..c9 of the cubic curve a line traces on an RS image.

    Stored 0-based: values[0] is c1 and values[8] is c9.
    """
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'values', _vec(self.values))

    def __getattr__(self, name: str) -> float:
        if len(name) == 2 and name[0] == 'c' and name[1] in '123456789':
            return float(self.values[int(name[1]) - 1])
        raise AttributeError(name)

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.values)))


def _sample_dict(q, s, has_tangent: bool) -> Dict[str, Any]:
    sample = {'u': float(q[0]), 'v': float(q[1]), 'su': float(s[0]), 'sv': float(s[1])}
    if not has_tangent:
        sample['has_tangent'] = False
    return sample


@dataclass(frozen=True, eq=False)
class LineObservation:
    """Samples of one detected curve, linked to a camera and a line.

    q holds (u, v) per sample, s the observed unit tangent per sample.
    """
    camera_id: int
    line_id: int
    q: np.ndarray
    s: np.ndarray
    has_tangent: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1, 2)
        s = np.asarray(self.s, dtype=float).reshape(-1, 2)
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 's', s)
        if self.has_tangent is None:
            object.__setattr__(self, 'has_tangent', np.ones(len(q), dtype=bool))
        else:
            object.__setattr__(self, 'has_tangent', np.asarray(self.has_tangent, dtype=bool))

    @property
    def num_samples(self) -> int:
        return len(self.q)

    @property
    def samples(self) -> List[Tuple[float, float, np.ndarray, bool]]:
        return [(float(q[0]), float(q[1]), s, bool(h))
                for q, s, h in zip(self.q, self.s, self.has_tangent)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cam': int(self.camera_id),
            'line': int(self.line_id),
            'samples': [
                _sample_dict(q, s, has)
                for q, s, has in zip(self.q, self.s, self.has_tangent)
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LineObservation':
        samples = data['samples']
        return cls(
            camera_id=int(data['cam']),
            line_id=int(data['line']),
            q=[[smp['u'], smp['v']] for smp in samples],
            s=[[smp['su'], smp['sv']] for smp in samples],
            has_tangent=[smp.get('has_tangent', True) for smp in samples],
        )


@dataclass(frozen=True)
class ResidualConfig:
    variant: ResidualVariant = ResidualVariant.E1_PERP_TANGENT
    lam: float = 1.0
    huber_delta: Optional[float] = None
    invalid_policy: InvalidPolicy = InvalidPolicy.MASK
    tangent_mode: TangentMode = TangentMode.SINE
    penalty: float = 1e3

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.huber_delta is not None and self.huber_delta <= 0:
            raise ValueError(f"huber delta must be > 0, got {self.huber_delta}")

    @property
    def rows_per_sample(self) -> int:
        return int(self.variant.distance_kind is not None) + int(self.variant.uses_tangent)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'variant': self.variant.value,
            'lambda': self.lam,
            'huber_delta': self.huber_delta,
            'invalid_policy': self.invalid_policy.value,
            'tangent_mode': self.tangent_mode.value,
            'penalty': self.penalty,
        }


@dataclass(frozen=True)
class GaugeSpec:
    fixed_camera_ids: Tuple[int, ...] = (0,)
    scale_fix: ScaleFix = ScaleFix.FIX_SECOND_TRANSLATION_NORM
    scale_line_id: int = 0
    scale_camera_id: int = 1
    fix_velocity: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            'fixed_camera_ids': list(self.fixed_camera_ids),
            'scale_fix': self.scale_fix.value,
            'scale_line_id': self.scale_line_id,
            'scale_camera_id': self.scale_camera_id,
            'fix_velocity': self.fix_velocity,
        }


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 100
    gradient_tol: float = 1e-8
    step_tol: float = 1e-10
    cost_tol: float = 1e-14
    mu_init: float = 1e-4
    mu_increase: float = 10.0
    mu_decrease: float = 0.3
    mu_max: float = 1e12
    diag_floor: float = 1e-12
    reorthonormalize_every: int = 10
    schur_threshold: int = 32
    escape_attempts: int = 4
    escape_scale: float = 1e-3
    max_escapes: int = 10
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Segment:
    """Finite piece of a scene line, used for visibility only"""
    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'p0', _vec(self.p0))
        object.__setattr__(self, 'p1', _vec(self.p1))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    def to_dict(self) -> Dict[str, Any]:
        return {'p0': self.p0.tolist(), 'p1': self.p1.tolist()}


@dataclass
class Scene:
    segments: List[Segment]
    rng_seed: int = 0

    @property
    def num_lines(self) -> int:
        return len(self.segments)

    def to_dict(self) -> Dict[str, Any]:
        return {'lines': [seg.to_dict() for seg in self.segments], 'rng_seed': self.rng_seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Scene':
        return cls(
            segments=[Segment(p0=item['p0'], p1=item['p1']) for item in data['lines']],
            rng_seed=int(data.get('rng_seed', 0)),
        )


@dataclass
class TrajectorySpec:
    kind: TrajectoryKind = TrajectoryKind.RING
    n_cameras: int = 8
    radius: float = 6.0
    elevation: float = -3.0
    azimuth_offset_deg: float = 22.5
    displacement: float = 6.0
    depth: float = 7.0
    readout_fraction: float = 0.1
    static: bool = False
    target: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    focal: float = 500.0
    width: int = 640
    height: int = 480
    principal_point: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.n_cameras < 2:
            raise ValueError(f"a trajectory needs at least 2 cameras, got {self.n_cameras}")

    def intrinsics(self) -> np.ndarray:
        cx, cy = self.principal_point or (self.width / 2.0, self.height / 2.0)
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])


@dataclass
class SolveReport:
    iterations: int
    cost_trace: List[float]
    damping_trace: List[float]
    termination: Termination
    cameras: List[RsCamera]
    lines: List[OrthonormalLine]
    initial_cost: float = 0.0
    final_cost: float = 0.0
    escapes: int = 0
    num_invalid: int = 0
    solve_time: float = 0.0
    method: str = SolverMode.RS.value
    errors: List[str] = field(default_factory=list)
    success: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'iterations': self.iterations,
            'termination': self.termination.value,
            'initial_cost': self.initial_cost,
            'final_cost': self.final_cost,
            'cost_trace': list(self.cost_trace),
            'damping_trace': list(self.damping_trace),
            'escapes': self.escapes,
            'num_invalid': self.num_invalid,
            'solve_time': self.solve_time,
            'errors': list(self.errors),
            'success': self.success,
        }


@dataclass
class DegeneracyReport:
    indeterminate_fraction: float
    smallest_eigenvalues: List[float]
    eigen_ratio: float
    flatness: float
    coplanarity: float
    num_samples: int
    flags: List[str] = field(default_factory=list)

    @property
    def collapsed(self) -> bool:
        return 'flatness_collapse' in self.flags

    def to_dict(self) -> Dict[str, Any]:
        return {
            'indeterminate_fraction': self.indeterminate_fraction,
            'smallest_eigenvalues': list(self.smallest_eigenvalues),
            'eigen_ratio': self.eigen_ratio,
            'flatness': self.flatness,
            'coplanarity': self.coplanarity,
            'num_samples': self.num_samples,
            'flags': list(self.flags),
        }


@dataclass
class EvalReport:
    rotation_err: List[float]
    translation_err: List[Optional[float]]
    line_dir_err: List[float]
    line_dist_err: List[float]
    ate_median: float
    ate_max: float

    @staticmethod
    def _median(values: List[Optional[float]]) -> float:
        kept = [v for v in values if v is not None]
        return float(np.median(kept)) if kept else float('nan')

    @property
    def rotation_median(self) -> float:
        return self._median(self.rotation_err)

    @property
    def translation_median(self) -> float:
        return self._median(self.translation_err)

    @property
    def line_dir_median(self) -> float:
        return self._median(self.line_dir_err)

    @property
    def line_dist_median(self) -> float:
        return self._median(self.line_dist_err)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rotation_err': list(self.rotation_err),
            'rotation_median': self.rotation_median,
            'translation_err': list(self.translation_err),
            'translation_median': self.translation_median,
            'line_dir_err': list(self.line_dir_err),
            'line_dir_median': self.line_dir_median,
            'line_dist_err': list(self.line_dist_err),
            'line_dist_median': self.line_dist_median,
            'ate_median': self.ate_median,
            'ate_max': self.ate_max,
        }


@dataclass
class TrialResult:
    """Outcome of one synthetic run; failures are recorded, never raised."""
    experiment: str
    method: str
    seed: int
    noise: float = 0.0
    axis_value: Optional[float] = None
    evaluation: Optional[EvalReport] = None
    final_cost: float = float('nan')
    iterations: int = 0
    solve_time: float = 0.0
    errors: List[str] = field(default_factory=list)
    success: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            'experiment': self.experiment,
            'method': self.method,
            'seed': self.seed,
            'noise': self.noise,
            'axis_value': self.axis_value,
            'evaluation': self.evaluation.to_dict() if self.evaluation else None,
            'final_cost': self.final_cost,
            'iterations': self.iterations,
            'solve_time': self.solve_time,
            'errors': list(self.errors),
            'success': self.success,
        }


@dataclass
class ParameterSet:
    """Camera and line values of one reconstruction (truth, initial or solved)"""
    cameras: List[RsCamera]
    lines: List[PluckerLine]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cameras': [cam.to_dict() for cam in self.cameras],
            'lines': [line.to_dict() for line in self.lines],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ParameterSet':
        return cls(
            cameras=[RsCamera.from_dict(item) for item in data['cameras']],
            lines=[PluckerLine.from_dict(item) for item in data['lines']],
        )


@dataclass
class GradcheckReport:
    """Worst analytic-vs-numeric relative error per Jacobian block"""
    worst: Dict[str, float]
    instances: int
    threshold: float = 1e-5
    errors: List[str] = field(default_factory=list)

    @property
    def failed_blocks(self) -> List[str]:
        return [name for name, err in self.worst.items() if not err < self.threshold]

    @property
    def passed(self) -> bool:
        return not self.failed_blocks and not self.errors

    def to_dict(self) -> Dict[str, Any]:
        return {
            'instances': self.instances,
            'threshold': self.threshold,
            'worst': dict(self.worst),
            'passed': self.passed,
            'failed_blocks': self.failed_blocks,
            'errors': list(self.errors),
        }
