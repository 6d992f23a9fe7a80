"""Exception types shared across the package.

Every error carries a short machine-readable ``reason`` (the class name) so the
CLI can report it without string parsing.
"""


class PartGraspError(Exception):
    @property
    def reason(self) -> str:
        return type(self).__name__


# geometry
class TooFewPoints(PartGraspError):
    pass


class EmptyCloud(PartGraspError):
    pass


class DegenerateCorrespondences(PartGraspError):
    pass


# shapes / rendering
class UnknownCategory(PartGraspError):
    pass


class ParamOutOfRange(PartGraspError):
    pass


class DoesNotFit(PartGraspError):
    pass


class NoVisiblePoints(PartGraspError):
    pass


# grasping
class EmptyRegion(PartGraspError):
    pass


class NoCandidates(PartGraspError):
    pass


class PartTooSmall(PartGraspError):
    pass


# language
class UnknownId(PartGraspError):
    pass


class Unresolvable(PartGraspError):
    pass


# grounding / eval
class ShapeMismatch(PartGraspError):
    pass


class LengthMismatch(PartGraspError):
    pass


class EmptyResults(PartGraspError):
    pass


class InfeasibleSplit(PartGraspError):
    pass


class MissingModel(PartGraspError):
    pass


class ConfigError(PartGraspError):
    pass
