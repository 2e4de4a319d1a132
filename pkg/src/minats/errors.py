"""Exception hierarchy shared by the whole toolchain."""


class MinatsError(Exception):
    """Base class for all language-level errors."""


class SortError(MinatsError):
    """Sorting of a static term failed."""


class UnboundStaticVar(SortError):
    pass


class ArityMismatch(SortError):
    pass


class SortMismatch(SortError):
    pass


class IllSorted(MinatsError):
    """A constraint or subtype query violated its sorting precondition."""


class TypeError_(MinatsError):
    """Type checking of a dynamic term failed."""

    def __init__(self, msg, loc=None):
        super().__init__(msg)
        self.loc = loc


class UnboundVar(TypeError_):
    pass


class TypeMismatch(TypeError_):
    pass


class GuardUnproven(TypeError_):
    pass


class UnprovenConstraint(TypeError_):
    """A required constraint came back Unknown; carries the offending queries."""

    def __init__(self, msg, constraints=(), loc=None):
        super().__init__(msg, loc)
        self.constraints = list(constraints)


class FreshnessViolation(TypeError_):
    pass


class FlavorViolation(TypeError_):
    """A proof position received a type, or a p-rule got a t-premise."""


class ValueFormViolation(MinatsError):
    """A guard-introduction or static-lambda body is not a value."""


class MissingErasureTarget(MinatsError):
    """A prop constant has no registered boolean counterpart."""


class UnsupportedSort(MinatsError):
    """SMT-LIB export cannot encode a free variable of this sort."""


class EvalError(MinatsError):
    pass


class OpenTerm(EvalError):
    pass


class MatchFailure(EvalError):
    """No case clause matched; distinct from being stuck."""


class SyntaxError_(MinatsError):
    def __init__(self, msg, line=None, col=None):
        super().__init__(msg)
        self.line = line
        self.col = col

    def __str__(self):
        base = super().__str__()
        if self.line is not None:
            return f"{self.line}:{self.col}: {base}"
        return base


class ElabError(MinatsError):
    """Declaration elaboration failed (unknown sort, duplicate name, ...)."""
