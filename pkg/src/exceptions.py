"""Error hierarchy for the rolling-shutter line bundle adjuster.

Scalar geometry helpers raise these directly. Vectorised evaluation over
many samples never raises per sample; it records a validity mask instead.
"""

from typing import Any, Optional


class RslbaError(Exception):
    """Base class for every error raised by this package"""


class CoincidentPoints(RslbaError):
    """Two points handed to a line constructor are (numerically) the same"""


class DegenerateLine(RslbaError):
    """Plücker vector with both moment and direction near zero"""


class DegenerateProjection(RslbaError):
    """A line projects to nothing usable (it passes through the camera centre)"""


class RowNotVisible(RslbaError):
    """Curve sample at a requested row falls outside the image columns"""


class VerticalTangent(RslbaError):
    """Virtual line is horizontal at the row, so u cannot be solved for"""


class DegenerateVirtualLine(RslbaError):
    """Virtual line normal (l1, l2) vanishes at the row"""


class TangentIndeterminate(RslbaError):
    """Curve gradient vanishes, so the tangent direction is 0/0"""


class MissingReference(RslbaError):
    """Observation points at a camera or line id that does not exist"""


class DisconnectedGraph(RslbaError):
    """Camera/line observation graph splits into several components"""


class LengthMismatch(RslbaError):
    """Trajectories of different lengths handed to a trajectory metric"""


class CameraInsideScene(RslbaError):
    """Generated camera centre lies inside the scene bounding box"""


class LineNotVisible(RslbaError):
    """Line does not cover enough image rows in a camera to be observed"""


class ConfigError(RslbaError):
    """Run configuration failed validation"""


class NumericalFailure(RslbaError):
    """Non-finite cost or step inside the optimiser.

    ``report`` carries the last accepted state so callers can inspect it.
    """

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report
