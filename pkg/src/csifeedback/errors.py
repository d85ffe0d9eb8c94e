"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid layer/graph/codec/generator configuration or shape mismatch."""


class NumericError(ArithmeticError):
    """Non-finite values where finite arithmetic is required (NaN/Inf)."""


class FormatError(IOError):
    """Corrupt, truncated, or incompatible binary file."""


class RangeError(ValueError):
    """Value outside the range a transform was fitted for."""


class EncodingError(ValueError):
    """Bitstream packing failure (e.g. index exceeds the bit depth)."""


class DecodingError(ValueError):
    """Bitstream unpacking failure (truncated payload, bad header)."""


class ContractViolationError(RuntimeError):
    """A caller broke a documented precondition (e.g. unfrozen encoder)."""
