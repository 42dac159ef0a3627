"""Exception hierarchy shared by all graphrank modules.

Every contract violation raises a named subclass of :class:`GraphRankError`
so callers (and the CLI exit-code mapping) can react to the category rather
than parse messages.
"""


class GraphRankError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GraphRankError):
    """Invalid or unknown configuration value; message carries the field path."""


class StaleArtifactsError(GraphRankError):
    """A consumed artifact changed since the manifest recorded its hash."""


class MissingArtifactsError(GraphRankError):
    """A pipeline stage requires artifacts that have not been produced."""


# graph construction / IO ---------------------------------------------------

class DanglingEdgeError(GraphRankError):
    """Edge endpoint outside [0, n)."""


class LabelOutOfRangeError(GraphRankError):
    """Node label outside [0, num_classes)."""


class EmptySplitError(GraphRankError):
    """A supplied split assignment leaves train, validation or test empty."""


class DegenerateGraphError(GraphRankError):
    """Synthetic generation produced an empty class or split."""


class GraphParseError(GraphRankError):
    """Malformed graph file; carries path and 1-based line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class InconsistentDimensionsError(GraphRankError):
    """Graph files disagree on node count or feature width."""


# numerical kernels ----------------------------------------------------------

class ShapeMismatchError(GraphRankError):
    """Operand shapes are incompatible."""


class EmptyMaskError(GraphRankError):
    """Loss mask selects no rows."""


class InvalidRateError(GraphRankError):
    """Dropout rate outside [0, 1)."""


class DivergedTrainingError(GraphRankError):
    """Training loss became non-finite."""


# attributes -----------------------------------------------------------------

class WrongSourceError(GraphRankError):
    """Prediction bundle has the wrong provenance for this attribute."""


class NotADistributionError(GraphRankError):
    """Vector is not a categorical distribution."""


class RowCountMismatchError(GraphRankError):
    """Attribute blocks disagree on the number of rows."""


class SchemaMismatchError(GraphRankError):
    """Persisted attribute file does not match the frozen column schema."""


# ranking --------------------------------------------------------------------

class EmptyValidationError(GraphRankError):
    """Validation split is empty; no classifier training set can be built."""


class InsufficientDataError(GraphRankError):
    """Too few rows to train a classifier."""


class WidthMismatchError(GraphRankError):
    """Scoring rows have a different feature width than the training rows."""


class BudgetExceedsPoolError(GraphRankError):
    """Labeling budget exceeds the unlabeled pool size."""


class EmptySetError(GraphRankError):
    """Ranking requested over an empty node set."""


class KExceedsLabeledError(GraphRankError):
    """Nearest-neighbor count exceeds the labeled pool size."""


class InvalidLambdaError(GraphRankError):
    """Neighbor-smoothing weight outside [0, 1]."""


class UnknownMethodError(GraphRankError):
    """Method name not in the prioritizer registry."""


# evaluation -----------------------------------------------------------------

class ZeroFailuresError(GraphRankError):
    """No failures in the unlabeled pool; TRC is undefined."""


class TooFewFailuresError(GraphRankError):
    """Total failures below the number of requested budget steps."""


class EmptyGridError(GraphRankError):
    """Budget grid is empty."""


class EmptyGroupError(GraphRankError):
    """A statistics group has too few values."""


class ZeroVarianceError(GraphRankError):
    """Pooled standard deviation is zero; effect size is undefined."""
