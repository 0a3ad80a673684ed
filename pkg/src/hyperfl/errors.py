"""Exception taxonomy shared by all hyperfl modules.

Every failure mode that callers are expected to handle gets its own class so
the CLI can map errors to stable exit codes (config -> 1, numeric -> 2,
file/format -> 3).
"""


class HyperflError(Exception):
    """Base class for all library errors."""


class DimensionError(HyperflError, ValueError):
    """Tensor shapes are inconsistent with the layout that owns them."""


class NumericError(HyperflError, ArithmeticError):
    """A non-finite value appeared where finite arithmetic is required."""


class CapabilityError(HyperflError, RuntimeError):
    """An operation was asked to do something outside its contract."""


class FormatError(HyperflError, ValueError):
    """A file or byte stream does not follow its documented layout."""


class ConsistencyError(HyperflError, ValueError):
    """Two inputs that must agree (e.g. image/label counts) do not."""


class CapacityError(HyperflError, ValueError):
    """A sampling request exceeds the available inventory."""


class ConfigError(HyperflError, ValueError):
    """An experiment configuration is invalid."""


class PrivacyError(HyperflError, RuntimeError):
    """A message payload violates the algorithm's privacy boundary."""
