"""Exception hierarchy shared by every fedasta module."""


class FedastaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FedastaError, ValueError):
    """Operand shapes do not line up."""


class ConfigurationError(FedastaError, ValueError):
    """A setting or argument is outside its valid range."""


class NumericOverflowError(FedastaError, ArithmeticError):
    """A forward or backward pass produced a non-finite value."""


class ProtocolError(FedastaError, RuntimeError):
    """A cache, message or call sequence was used out of order."""


class DegenerateRowError(FedastaError, ValueError):
    """An attention-mask row has no finite entry."""

    def __init__(self, row: int):
        super().__init__(f"mask row {row} has no finite entry")
        self.row = row


class EmptySpectrumError(FedastaError, ValueError):
    """Thresholding removed every spectral component."""


class AsymmetricSpectrumError(FedastaError, ValueError):
    """Inverse transform left a non-negligible imaginary residue."""


class IngestionError(FedastaError, ValueError):
    """An input file could not be parsed."""


class RangeError(FedastaError, IndexError):
    """A time step falls outside the covered range."""
