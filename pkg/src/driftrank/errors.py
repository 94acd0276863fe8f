"""Exception types shared across the package."""


class DriftRankError(Exception):
    """Base class for all library errors."""


# --- traces ---------------------------------------------------------------

class EmptyWindow(DriftRankError):
    """No recorded step of the trace falls inside the requested window."""


class TraceIncomplete(DriftRankError):
    """Trace ends before the start of the evaluation window."""


class StepMismatch(DriftRankError):
    """Two traces disagree on their recorded step sets where they overlap."""


# --- ranking metrics ------------------------------------------------------

class NotAPermutation(DriftRankError):
    """Ranking is not a permutation of the configuration set."""


class TooFewConfigs(DriftRankError):
    """Pairwise comparison needs at least two configurations."""


class KOutOfRange(DriftRankError):
    """k must satisfy 1 <= k <= number of configurations."""


class NonPositiveReference(DriftRankError):
    """Normalization requires a strictly positive reference metric."""


# --- stream simulation ----------------------------------------------------

class InvalidSpec(DriftRankError):
    """Stream specification violates its invariants (weights, dimensions)."""


class MissingClass(DriftRankError):
    """A label class present in the data has no sub-sampling rate."""


class TooFewExamples(DriftRankError):
    """Fewer examples than requested cluster count."""


# --- online models --------------------------------------------------------

class Diverged(DriftRankError):
    """Training produced non-finite or runaway parameters."""

    def __init__(self, config: int, step: int):
        super().__init__(f"config {config} diverged at step {step}")
        self.config = config
        self.step = step


class StateMismatch(DriftRankError):
    """Saved model state does not line up with the stream suffix."""


# --- predictors -----------------------------------------------------------

class WindowUnderflow(DriftRankError):
    """Prediction window would start before step 1."""


class InsufficientHistory(DriftRankError):
    """Not enough window aggregates to fit the requested law."""


class FitDiverged(DriftRankError):
    """Curve fitting failed to produce finite parameters after all restarts."""


class EmptyEvaluationWindow(DriftRankError):
    """No examples fall inside the evaluation window."""


# --- scheduler ------------------------------------------------------------

class InvalidInterval(DriftRankError):
    """Late-start interval is empty or out of range."""


class PredictorFailure(DriftRankError):
    """A predictor failed at a stopping step; carries diagnostics."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"prediction failed at stopping step {step}: {cause!r}")
        self.step = step
        self.cause = cause


# --- harness --------------------------------------------------------------

class SpecValidationError(DriftRankError):
    """Experiment specification document failed validation."""
