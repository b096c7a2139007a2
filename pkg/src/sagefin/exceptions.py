"""Exception types raised across the package."""


class SageFinError(Exception):
    """Base class. ``code`` is a short machine-readable tag used by the CLI."""

    code = "error"


class IndexOutOfRange(SageFinError, IndexError):
    code = "index_out_of_range"


class DimensionMismatch(SageFinError, ValueError):
    code = "dimension_mismatch"


class DegenerateBatch(SageFinError, ValueError):
    code = "degenerate_batch"


class DegenerateInput(SageFinError, ValueError):
    code = "degenerate_input"


class MissingForwardCache(SageFinError, RuntimeError):
    code = "missing_forward_cache"


class ExhaustedSpace(SageFinError, ValueError):
    code = "exhausted_space"


class InsufficientLabels(SageFinError, ValueError):
    code = "insufficient_labels"


class NonFiniteLoss(SageFinError, FloatingPointError):
    code = "non_finite_loss"

    def __init__(self, message, terms=None):
        super().__init__(message)
        self.terms = terms or {}


class EmptyMask(SageFinError, ValueError):
    code = "empty_mask"


class UntrainedModel(SageFinError, RuntimeError):
    code = "untrained_model"


class TestLeakage(SageFinError, RuntimeError):
    __test__ = False
    code = "test_leakage"


class SchemaMismatch(SageFinError, ValueError):
    code = "schema_mismatch"


class DanglingEdge(SageFinError, ValueError):
    code = "dangling_edge"


class InvalidConfig(SageFinError, ValueError):
    code = "invalid_config"
