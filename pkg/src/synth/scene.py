import itertools
import logging
from typing import List, Optional, Sequence

import numpy as np

from src.geometry.lines import plucker_from_points
from src.models import PluckerLine, Scene, Segment

logger = logging.getLogger(__name__)


def make_cube_scene(side: float = 2.0, center: Sequence[float] = (0.0, 0.0, 0.0),
                    seed: int = 0, rotation: Optional[np.ndarray] = None) -> Scene:
    """Wireframe cube: 12 edges, axis-aligned unless a rotation is given.

    The rotation turns the cube about its own centre.
    """
    if side <= 0:
        raise ValueError(f"cube side must be positive, got {side}")
    center = np.asarray(center, dtype=float).reshape(3)
    half = side / 2.0
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)

    corners = [np.array(signs, dtype=float) for signs in itertools.product((-1.0, 1.0), repeat=3)]
    segments = []
    for i, j in itertools.combinations(range(len(corners)), 2):
        # edges join corners differing in exactly one coordinate
        if np.count_nonzero(corners[i] != corners[j]) != 1:
            continue
        p0 = center + R @ (half * corners[i])
        p1 = center + R @ (half * corners[j])
        segments.append(Segment(p0=p0, p1=p1))
    return Scene(segments=segments, rng_seed=seed)


def segment_line(segment: Segment) -> PluckerLine:
    """Plücker line of a segment, directed from p0 to p1"""
    return plucker_from_points(segment.p1, segment.p0)


def scene_lines(scene: Scene) -> List[PluckerLine]:
    return [segment_line(seg) for seg in scene.segments]


def scene_bounds(scene: Scene):
    points = np.array([p for seg in scene.segments for p in (seg.p0, seg.p1)])
    return points.min(axis=0), points.max(axis=0)


def random_segment(rng: np.random.Generator, center: Sequence[float] = (0.0, 0.0, 6.0),
                   spread: float = 2.0, min_length: float = 0.5) -> Segment:
    center = np.asarray(center, dtype=float)
    while True:
        p0 = center + rng.uniform(-spread, spread, 3)
        p1 = center + rng.uniform(-spread, spread, 3)
        if np.linalg.norm(p1 - p0) >= min_length:
            return Segment(p0=p0, p1=p1)


def random_line(rng: np.random.Generator, center: Sequence[float] = (0.0, 0.0, 6.0),
                spread: float = 2.0) -> PluckerLine:
    return segment_line(random_segment(rng, center, spread))


def select_lines(scene: Scene, count: int, seed: int = 0) -> Scene:
    """Random subset of ``count`` lines, kept in their original order"""
    if not 1 <= count <= scene.num_lines:
        raise ValueError(f"cannot select {count} of {scene.num_lines} lines")
    if count == scene.num_lines:
        return scene
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(scene.num_lines, size=count, replace=False))
    logger.debug("selected lines %s", keep.tolist())
    return Scene(segments=[scene.segments[i] for i in keep], rng_seed=seed)
