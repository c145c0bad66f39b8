"""Exception hierarchy shared across the package."""


class Blowup4DError(Exception):
    """Base class for all package errors."""


# grid / domain
class DomainSpecError(Blowup4DError):
    pass


class SpecOutOfGrid(DomainSpecError):
    pass


class HoleSeparationError(SpecOutOfGrid):
    """Hole faces too close to the outer box faces."""


class DegenerateDomain(DomainSpecError):
    pass


class NonfiniteIntegrand(Blowup4DError):
    pass


# linear / nonlinear solvers
class NoConvergence(Blowup4DError):
    def __init__(self, iterations, residual, stage=None, message=None):
        self.iterations = iterations
        self.residual = residual
        self.stage = stage
        msg = message or "no convergence after %d iterations (residual %.3e)" % (iterations, residual)
        if stage is not None:
            msg = "[%s] %s" % (stage, msg)
        super().__init__(msg)


class JacobianSolveFailure(Blowup4DError):
    pass


class OverflowGuard(Blowup4DError):
    pass


class StageFailed(Blowup4DError):
    def __init__(self, index, completed, cause):
        self.index = index
        self.completed = completed
        self.cause = cause
        super().__init__("continuation stage %d failed: %s" % (index, cause))


# Green's function / configurations
class SourceTooCloseToBoundary(Blowup4DError):
    pass


class CoincidentPoints(Blowup4DError):
    pass


class NonpositiveWeight(Blowup4DError):
    pass


class CollidingPoints(Blowup4DError):
    pass


class NotAdmissible(Blowup4DError):
    pass


class DuplicatePoints(Blowup4DError):
    pass


class PointOnWall(Blowup4DError):
    pass


# ansatz
class EpsOutOfRange(Blowup4DError):
    pass


class CoreUnderResolved(Blowup4DError):
    pass


class BadIndex(Blowup4DError):
    pass


# weight expressions
class KExprError(Blowup4DError):
    pass


class ParseError(KExprError):
    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        detail = message
        if self.expected:
            detail += " (expected one of: %s)" % ", ".join(self.expected)
        super().__init__("%s at offset %d" % (detail, offset))


class UnknownIdentifier(ParseError):
    pass


class DomainError(KExprError):
    def __init__(self, func, point):
        self.func = func
        self.point = point
        super().__init__("%s outside its domain at point %s" % (func, point))


class NonFinite(KExprError):
    def __init__(self, point):
        self.point = point
        super().__init__("non-finite value at point %s" % (point,))


# configuration
class ConfigError(Blowup4DError):
    pass
