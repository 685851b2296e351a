import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.models import LineObservation, ParameterSet, RsCamera, Scene, SolveReport
from src.geometry.lines import orthonormal_to_plucker

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def write_json(path: PathLike, data: Dict[str, Any]) -> str:
    # json writes floats with repr, which round-trips every double exactly
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='\n') as f:
        json.dump(data, f, indent=2)
        f.write('\n')
    return str(path)


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path, 'r') as f:
        return json.load(f)


def save_scene(path: PathLike, scene: Scene) -> str:
    return write_json(path, scene.to_dict())


def load_scene(path: PathLike) -> Scene:
    return Scene.from_dict(read_json(path))


def save_cameras(path: PathLike, cameras: Sequence[RsCamera]) -> str:
    return write_json(path, {'cameras': [cam.to_dict() for cam in cameras]})


def load_cameras(path: PathLike) -> List[RsCamera]:
    return [RsCamera.from_dict(item) for item in read_json(path)['cameras']]


def save_observations(path: PathLike, observations: Iterable[LineObservation]) -> str:
    return write_json(path, {'observations': [obs.to_dict() for obs in observations]})


def load_observations(path: PathLike) -> List[LineObservation]:
    return [LineObservation.from_dict(item) for item in read_json(path)['observations']]


def solution_parameters(report: SolveReport) -> ParameterSet:
    return ParameterSet(cameras=list(report.cameras),
                        lines=[orthonormal_to_plucker(tau) for tau in report.lines])


def save_parameters(path: PathLike, params: ParameterSet) -> str:
    return write_json(path, params.to_dict())


def load_parameters(path: PathLike) -> ParameterSet:
    return ParameterSet.from_dict(read_json(path))


def tum_rows(cameras: Sequence[RsCamera]) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    """(index, centre, camera-to-world quaternion x y z w) per camera"""
    return [(index, cam.center, Rotation.from_matrix(cam.R0.T).as_quat())
            for index, cam in enumerate(cameras)]


def write_tum(path: PathLike, cameras: Sequence[RsCamera]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='\n') as f:
        for index, center, quat in tum_rows(cameras):
            values = ' '.join(repr(float(x)) for x in (*center, *quat))
            f.write(f"{index} {values}\n")
    return str(path)


def read_tum(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Camera centres (N, 3) and camera-to-world rotations (N, 3, 3)"""
    centers, rotations = [], []
    with open(path, 'r') as f:
        for line in f:
            if not line.strip() or line.startswith('#'):
                continue
            parts = [float(x) for x in line.split()]
            centers.append(parts[1:4])
            rotations.append(Rotation.from_quat(parts[4:8]).as_matrix())
    return np.array(centers), np.array(rotations)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])
    return str(path)
