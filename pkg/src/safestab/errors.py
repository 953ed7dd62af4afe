"""Exception types shared across the library."""


class SafeStabError(Exception):
    """Base class for all library errors."""


class ScenarioError(SafeStabError):
    """Invalid scenario definition or dimension mismatch."""


class NumericEvaluationError(SafeStabError):
    """A user-supplied map returned a non-finite value."""

    def __init__(self, field, x, value):
        self.field = field
        self.x = x
        self.value = value
        super().__init__(f"non-finite value in '{field}' at x={x!r}: {value!r}")


class SingularConstraintError(SafeStabError):
    """A constraint normal vanished where the formulation needs it nonzero."""


class InfeasibleProblemError(SafeStabError):
    """No feasible point exists for the requested constraint set."""


class CertificateRefusal(SafeStabError):
    """Region-of-attraction certification failed; carries the witness state."""

    def __init__(self, reason, witness=None):
        self.reason = reason
        self.witness = witness
        msg = reason if witness is None else f"{reason} (witness state {witness!r})"
        super().__init__(msg)
