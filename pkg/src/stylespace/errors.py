"""Exception types shared across the package."""


class StyleSpaceError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(StyleSpaceError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(StyleSpaceError):
    """An input value lies outside the mathematical domain of an operation."""


class ContractError(StyleSpaceError):
    """A caller violated a documented precondition."""


class NumericError(StyleSpaceError):
    """A computation produced NaN or otherwise lost numeric validity."""


class FormatError(StyleSpaceError):
    """A serialized artifact (checkpoint, manifest, ...) is malformed."""


class DataError(StyleSpaceError):
    """Corpus ingestion or generation could not produce usable data."""
