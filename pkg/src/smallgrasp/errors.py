"""Exception types raised across the package."""


class SmallGraspError(Exception):
    pass


class RankDeficient(SmallGraspError):
    pass


class NoContact(SmallGraspError):
    pass


class DegenerateCluster(SmallGraspError):
    pass


class DegenerateGeometry(SmallGraspError):
    pass


class LostContact(SmallGraspError):
    pass


class EmptyRegion(SmallGraspError):
    pass


class EmptyDataset(SmallGraspError):
    pass


class SingleClassDataset(SmallGraspError):
    pass


class ModelSampleMismatch(SmallGraspError):
    pass


class InvalidEvent(SmallGraspError):
    pass


class WorldExhausted(SmallGraspError):
    pass


class OverfilledBowl(SmallGraspError):
    pass


class DroppedObject(SmallGraspError):
    pass


class FormatError(SmallGraspError):
    """Artifact file has the wrong magic, version or layout."""
