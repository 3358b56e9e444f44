"""Exception hierarchy shared by all dgan modules."""


class DganError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DganError):
    """A config file or spec object failed validation."""


class DatasetNotFoundError(DganError):
    """The dataset source directory is missing required files."""


class CorruptDataError(DganError):
    """A dataset file exists but its contents are malformed."""


class DegenerateSpecError(DganError):
    """A long-tail spec produces an unusable dataset (e.g. an empty class)."""


class InsufficientSamplesError(DganError):
    """Fewer samples are available than an operation requires."""


class InsufficientBatchError(DganError):
    """A contrastive loss received a batch below its minimum size."""


class ContractViolationError(DganError):
    """An input violated a documented precondition (shape, norm, range)."""


class TrainingDivergedError(DganError):
    """A training loss became non-finite."""

    def __init__(self, step: int, loss_name: str):
        self.step = step
        self.loss_name = loss_name
        super().__init__(f"training diverged at step {step}: loss '{loss_name}' is not finite")


class NumericalInstabilityError(DganError):
    """A matrix computation failed beyond the tolerated eigenvalue clamp."""


class DegenerateLabelsError(DganError):
    """A classifier fit was requested on a single-class label set."""


class UndefinedDeviationError(DganError):
    """Class deviation is undefined because a training count is zero."""


class InsufficientClassSamplesError(DganError):
    """Too few generated samples were labeled with a requested class."""


class RunDirLockedError(DganError):
    """Another process holds the run-directory lock."""


class MissingMetricError(DganError):
    """A report needs a metric record that no run directory provides."""
