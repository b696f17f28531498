"""
Exception hierarchy for evanscope

Every error carries a stable machine-readable ``code`` and a ``details`` dict
so that CLI outputs and per-sample sweep rows can serialize failures.
"""

from typing import Any, Dict, List, Optional


class EvanscopeError(Exception):
    """Base class for all evanscope errors."""

    code = "internal"

    def __init__(self, msg: str, **details: Any):
        super(EvanscopeError, self).__init__(msg)
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": str(self), "details": jsonable(self.details)}


class ModelDomainError(EvanscopeError):
    """Raised when an evaluator is called outside its domain or A0 is singular."""
    code = "domain"


class AxisEigenvalueError(EvanscopeError):
    """Raised when a matrix has an eigenvalue on the imaginary axis.

    ``eigenvalue`` holds the offending eigenvalue and ``gap`` its distance to
    the axis relative to the matrix norm.
    """
    code = "axis-eigenvalue"

    def __init__(self, msg: str, eigenvalue: complex, gap: float):
        super(AxisEigenvalueError, self).__init__(msg, eigenvalue=eigenvalue, gap=gap)
        self.eigenvalue = eigenvalue
        self.gap = gap


class CharacteristicShockError(AxisEigenvalueError):
    """Raised when an endstate matrix has an eigenvalue within tolerance of the axis."""
    code = "characteristic-shock"


class RadiusError(EvanscopeError):
    """Raised when the tail iteration does not contract; use a smaller radius."""
    code = "radius"


class TruncationError(EvanscopeError):
    """Raised when the truncation length is too short for the tail decay."""
    code = "truncation"


class NonConvergenceError(EvanscopeError):
    """Raised when Newton stagnates.

    The residual history is available as ``history``.
    """
    code = "non-convergence"

    def __init__(self, msg: str, history: Optional[List[float]] = None):
        super(NonConvergenceError, self).__init__(msg, history=list(history or []))
        self.history = list(history or [])


class TransversalityError(EvanscopeError):
    """Raised when a connection Jacobian is singular."""
    code = "transversality-failure"


class ChartDomainError(EvanscopeError):
    """Raised when a chart is evaluated outside its Newton basin."""
    code = "chart-domain"


class SetupError(EvanscopeError):
    """Raised when an alternative construction violates its rank conditions."""
    code = "setup"


class ConjugationError(EvanscopeError):
    """Raised when a conjugator loses conditioning."""
    code = "conjugation"


class HPGapError(EvanscopeError):
    """Raised when the slow and fast clusters of the limiting symbol merge."""
    code = "hp-gap"

    def __init__(self, msg: str, gap: float, radius: float):
        super(HPGapError, self).__init__(msg, gap=gap, radius=radius)
        self.gap = gap
        self.radius = radius


class ContinuationNeededError(EvanscopeError):
    """Raised when an eigenvalue sits on the axis at the glancing boundary."""
    code = "continuation-needed"


class DegenerateProfileError(EvanscopeError):
    """Raised when the translation pinning of an R function is impossible."""
    code = "degenerate-profile"


class DimensionError(EvanscopeError):
    """Raised when a subspace dimension disagrees with the index counts."""
    code = "dimension"


class ConfigError(EvanscopeError):
    """Raised on malformed run configurations."""
    code = "config"


def jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if hasattr(value, "tolist"):
        return jsonable(value.tolist())
    if isinstance(value, float) or isinstance(value, (int, str, bool)) or value is None:
        return value
    return str(value)
