"""Exception and warning types shared across the package."""


class SingularFlowError(Exception):
    """Base class for errors raised by this package."""


class ExprSyntaxError(SingularFlowError, SyntaxError):
    """Malformed expression text; ``pos`` is the 0-based character offset."""

    def __init__(self, message: str, text: str = "", pos: int = 0):
        self.text_source = text
        self.pos = pos
        caret = f"\n  {text}\n  {' ' * pos}^" if text else ""
        super().__init__(f"{message} at position {pos}{caret}")

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class UnknownIdentifier(SingularFlowError):
    pass


class DomainError(SingularFlowError, ArithmeticError):
    """Evaluation left a function's domain; ``node`` is the offending Expr."""

    def __init__(self, message: str, node=None):
        self.node = node
        if node is not None:
            message = f"{message} in {node}"
        super().__init__(message)


class NonFinite(SingularFlowError, ValueError):
    pass


class SchemaError(SingularFlowError, ValueError):
    pass


class DimensionMismatch(SingularFlowError, ValueError):
    pass


class AlreadyAutonomous(SingularFlowError):
    pass


class ProjectionDiverged(SingularFlowError):
    pass


class JacobianRankDeficient(ProjectionDiverged):
    pass


class RankDriftError(SingularFlowError):
    pass


class OffManifold(SingularFlowError):
    pass


class StepRejected(SingularFlowError):
    pass


class TooFewSamples(SingularFlowError, ValueError):
    pass


class RankDriftWarning(UserWarning):
    """Pivot pattern differs from the reference pattern of a constraint level."""
