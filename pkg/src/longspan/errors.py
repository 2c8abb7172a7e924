"""Exception hierarchy shared across the package."""


class LongspanError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LongspanError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(LongspanError):
    """An operation's precondition or documented contract was violated."""


class DegenerateRowError(LongspanError):
    """A softmax row has no permitted entry."""


class DomainError(LongspanError):
    """An argument is outside the operation's valid domain."""


class InputError(LongspanError):
    """Model input is malformed (bad token id, overlong sequence, empty doc)."""


class ScorerError(LongspanError):
    """A sentence scorer returned a non-finite value."""


class SingularFitError(LongspanError):
    """Least-squares design matrix is rank deficient or underdetermined."""


class FormatError(LongspanError):
    """A serialized artifact (checkpoint, corpus line, coefficient file) is malformed."""


class TrainingDivergedError(LongspanError):
    """Training loss became non-finite."""
