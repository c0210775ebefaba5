"""Exception types shared across the package."""


class ElomqError(Exception):
    """Base class for all library errors."""


class OmqSyntaxError(ElomqError):
    """Raised on malformed input text; carries position and expectation."""

    def __init__(self, message, line=None, column=None, expected=None):
        self.line = line
        self.column = column
        self.expected = expected
        where = ""
        if line is not None:
            where = f" at line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(message + where)


class DialectError(ElomqError):
    """An inverse role occurred where only plain EL is allowed."""


class SignatureViolation(ElomqError):
    """An ABox uses a symbol outside the declared signature."""


class NotEntailed(ElomqError):
    """A precondition `abox entails query(tuple)` does not hold."""


class BoundTooSmall(ElomqError):
    """A depth/size bound was too small to preserve entailment."""


class NotATree(ElomqError):
    """A tree-shaped ABox was required."""


class TooLarge(ElomqError):
    """Input exceeds the budget of an exact algorithm."""


class NotTreeifiable(ElomqError):
    """Fork elimination on the query does not produce a tree."""


class NotLinear(ElomqError):
    """A linear Datalog program was required."""


class IDBInInput(ElomqError):
    """An input ABox uses an IDB relation of the program."""


class PreconditionViolated(ElomqError):
    """A stated input-side condition of a reduction does not hold."""


class BudgetExceeded(ElomqError):
    """A bounded search ran past its enumeration budget."""


class StateBudgetExceeded(ElomqError):
    """Determinization exceeded the configured state cap."""


class MalformedWitness(ElomqError):
    """A witness object is structurally unusable (not merely failing a condition)."""
