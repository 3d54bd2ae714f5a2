"""
Exception hierarchy for the insertion simulator.

Every error carries a ``failure_cause`` so the controller can turn an
exception raised deep inside the plant or the hand solver into the single
failure cause recorded on a TrialResult.
"""

from typing import Optional


class InsertionError(RuntimeError):
    """Root of every error raised by the package"""

    failure_cause: str = "none"

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


# Geometry
class GeometryError(InsertionError):
    pass


class DegenerateCloud(GeometryError):
    pass


class InvalidDimension(GeometryError):
    pass


class PegExceedsHole(GeometryError):
    pass


# Pose math and tracking
class PoseError(InsertionError):
    pass


class NearPiRotation(PoseError):
    pass


class StaleObservation(PoseError):
    pass


# Hand model
class HandError(InsertionError):
    failure_cause = "workspace"


class CollinearContacts(HandError):
    pass


class JointLimit(HandError):
    pass


class InfeasibleTriangle(HandError):
    pass


class NonConvergence(HandError):
    pass


class DatasetError(HandError):
    pass


class DivergedTraining(HandError):
    pass


class ModelFormatError(HandError):
    pass


# Plant
class WorldError(InsertionError):
    pass


class WorkspaceExceeded(WorldError):
    failure_cause = "workspace"


class SolverFailure(WorldError):
    failure_cause = "jam"


# Controller
class ControlError(InsertionError):
    pass


class TimeoutExceeded(ControlError):
    failure_cause = "timeout"


class WIHMWorkspaceExceeded(ControlError):
    failure_cause = "workspace"


class GraspInfeasible(ControlError):
    failure_cause = "grasp"


# Harness
class HarnessError(InsertionError):
    pass


class ConfigError(HarnessError):
    pass


class UnknownObject(ConfigError):
    pass


class ReportError(HarnessError):
    pass
