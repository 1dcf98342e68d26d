"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class EmbedError(Exception):
    """Base class for all errors raised by c0embed."""


# -- metric axioms ---------------------------------------------------------


class MetricAxiomError(EmbedError, ValueError):
    """A distance matrix violates a metric axiom.

    ``indices`` holds the witnessing point indices.
    """

    axiom = "metric"

    def __init__(self, message: str, indices: tuple[int, ...] = ()):
        super().__init__(message)
        self.indices = tuple(indices)


class NotSquare(MetricAxiomError):
    axiom = "square"


class NonzeroDiagonal(MetricAxiomError):
    axiom = "diagonal"


class Asymmetry(MetricAxiomError):
    axiom = "symmetry"


class NegativeDistance(MetricAxiomError):
    axiom = "nonnegativity"


class ZeroOffDiagonal(MetricAxiomError):
    axiom = "separation"


class TriangleViolation(MetricAxiomError):
    axiom = "triangle"


class CoordinateMismatch(MetricAxiomError):
    axiom = "coordinates"


class EmptyPairSet(EmbedError, ValueError):
    pass


class EmptySet(EmbedError, ValueError):
    pass


# -- construction hypotheses -----------------------------------------------


class HypothesisViolated(EmbedError):
    """A precondition of a construction step failed.

    ``witness`` carries whatever data pins the failure down (a pair, a piece,
    numeric residuals).
    """

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class LipschitzHypothesisViolated(HypothesisViolated):
    pass


class LowerBoundHypothesisViolated(HypothesisViolated):
    pass


class GapHypothesisViolated(HypothesisViolated):
    pass


class BallContainmentViolated(HypothesisViolated):
    pass


class NoFeasibleEpsilon(HypothesisViolated):
    pass


class ProviderHypothesisViolated(HypothesisViolated):
    pass


class CoverHypothesisViolated(HypothesisViolated):
    pass


class SeedTooSmall(HypothesisViolated):
    pass


class NonDecreasingEpsSeq(EmbedError, ValueError):
    pass


class TooLarge(EmbedError, ValueError):
    pass


# -- builder ---------------------------------------------------------------


class ConstructionError(EmbedError):
    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class ScaleInfeasible(ConstructionError):
    pass


class NotGood(ConstructionError):
    pass


class TerminationGuardExceeded(ConstructionError):
    pass


class InvariantFailed(ConstructionError):
    pass


class ShapeMismatch(EmbedError, ValueError):
    pass


# -- io --------------------------------------------------------------------


class BadSpec(EmbedError, ValueError):
    pass


class SpaceIOError(EmbedError, OSError):
    pass


class ParseError(EmbedError, ValueError):
    def __init__(self, message: str, line: int, column: int | None = None):
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


class SchemaError(EmbedError, ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvariantError(EmbedError, ValueError):
    pass
