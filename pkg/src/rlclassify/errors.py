"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents are incompatible with the operation."""


class ContractError(RuntimeError):
    """A documented precondition was violated by the caller."""


class NonFiniteError(FloatingPointError):
    """A forward or backward computation produced NaN or Inf."""


class ConfigError(ValueError):
    """Invalid network, attack or training configuration."""


class InputError(ValueError):
    """Invalid labels, class indices or other user-supplied data."""


class FormatError(ValueError):
    """A dataset or checkpoint file does not follow its binary layout."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class ChecksumError(FormatError):
    pass
