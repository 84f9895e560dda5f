"""Constants and errors shared by the factorrsf core modules."""

# ---------------------------------------------------------------------------
# Factor split encoding
# ---------------------------------------------------------------------------
# Labels map to bit positions of little-endian 32-bit words. Deterministic
# enumeration is limited to single-word factors; wider factors are always
# split on randomly drawn complementary pairs.
WORD_BITS = 32
MAX_ENUMERATED_LABELS = 32
MAX_PAIR_REJECTIONS = 1000  # rejection-sampling cap per sample_pair draw
PAIR_COUNT_UNBOUNDED = 2**63 - 1  # num_complementary_pairs() for L > 63

# ---------------------------------------------------------------------------
# Growing and fitting
# ---------------------------------------------------------------------------
DEFAULT_NTREE = 250
DEFAULT_NODESIZE = 3  # d0: minimum events per terminal node
DEFAULT_NSPLIT = 0  # 0 = enumerate every pair of factors with <= 32 labels
MAX_BOOTSTRAP_RETRIES = 100

# ---------------------------------------------------------------------------
# Data ingestion
# ---------------------------------------------------------------------------
DEFAULT_MAX_FACTOR_LEVELS = 5  # numeric columns with this many values or fewer load as factors
CONTINUOUS_NOISE_PREFIX = "c"
DISCRETE_NOISE_PREFIX = "d"

# ---------------------------------------------------------------------------
# Variable importance
# ---------------------------------------------------------------------------
DEFAULT_LEVEL = 0.68  # 16th / 84th percentile interval
DEFAULT_ALPHA = 0.05
DEFAULT_BOOT_REPS = 100

MODEL_FORMAT_VERSION = 1


class ForestError(Exception):
    """Base class for every error raised by factorrsf."""


class DataError(ForestError):
    """Input data violates a dataset contract."""


class SplitError(ForestError):
    """A factor split or label index is invalid."""


class InadmissibleSplit(ForestError):
    """A split leaves one daughter empty, so no statistic is defined."""


class InsufficientEvents(ForestError):
    """Too few events to grow a tree."""


class NoOOBPrediction(ForestError):
    """The case is in-bag for every tree of the forest."""


class ConfigError(ForestError):
    """Experiment configuration failed validation."""
