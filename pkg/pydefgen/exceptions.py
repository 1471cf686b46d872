from typing import Optional


class PydefgenError(Exception):
    """Generic Pydefgen Exception."""


class PydefgenInputError(PydefgenError):
    """Invalid user input, data file or configuration."""


class PydefgenNumericError(PydefgenError):
    """Numerical failure during a forward or backward computation."""


class PydefgenTapeError(PydefgenError):
    """Misuse of the differentiation tape."""


class PydefgenMalformedRecord(PydefgenInputError):
    """Dataset record has the wrong shape or is missing a field."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(
            message if line_number is None else f"line {line_number}: {message}"
        )
        self.line_number = line_number


class PydefgenTargetNotFound(PydefgenInputError):
    """Target word does not occur in its context and no span was given."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(
            message if line_number is None else f"line {line_number}: {message}"
        )
        self.line_number = line_number


class PydefgenInvalidEntry(PydefgenInputError):
    """Entry violates its span or definition invariants."""


class PydefgenEmptyCorpus(PydefgenInputError):
    """No entries to build a vocabulary from."""


class PydefgenInvalidConfig(PydefgenInputError):
    """Configuration value out of its allowed range."""


class PydefgenLambdaOutOfRange(PydefgenInvalidConfig):
    """Loss mixing weight outside [0, 1]."""


class PydefgenConfigMismatch(PydefgenInputError):
    """Checkpoint was written for a different configuration."""


class PydefgenCorruptCheckpoint(PydefgenInputError):
    """Checkpoint failed its checksum or could not be parsed."""


class PydefgenEmptyHypothesisSet(PydefgenInputError):
    """Metric requested over zero hypotheses."""


class PydefgenStageOrderError(PydefgenInputError):
    """Second training stage requested without a first-stage checkpoint."""


class PydefgenSequenceTooLong(PydefgenInputError):
    """Sequence longer than the model's positional table."""


class PydefgenShapeMismatch(PydefgenNumericError):
    """Operand shapes are incompatible."""


class PydefgenNonFiniteValue(PydefgenNumericError):
    """An op produced NaN or Inf."""

    def __init__(self, op_name: str):
        super().__init__(f"Non-finite value produced by op '{op_name}'")
        self.op_name = op_name


class PydefgenZeroNorm(PydefgenNumericError):
    """Cosine similarity over a (near) zero vector."""


class PydefgenAllMasked(PydefgenNumericError):
    """Pooling over rows that are all masked out."""


class PydefgenEmptyTarget(PydefgenNumericError):
    """Sample has no flagged target position."""


class PydefgenAllPadded(PydefgenNumericError):
    """Loss requested over a batch with no real gold token."""


class PydefgenNonFiniteGradient(PydefgenNumericError):
    """Optimizer received a NaN or Inf gradient."""


class PydefgenDivergedLoss(PydefgenNumericError):
    """Training loss became non-finite."""

    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class PydefgenTapeReused(PydefgenTapeError):
    """Backward called twice on one tape."""


class PydefgenNonScalarLoss(PydefgenTapeError):
    """Backward called on a tensor with more than one element."""
