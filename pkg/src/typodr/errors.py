"""Exception types shared across the toolkit."""


class TypodrError(Exception):
    """Base class for all toolkit errors."""


class InputError(TypodrError):
    """An operation was called with arguments that violate its contract."""


class DataError(TypodrError):
    """A data file is malformed, inconsistent, or corrupt."""


class NumericalError(TypodrError):
    """A numerical failure (non-finite loss or gradient) occurred."""
