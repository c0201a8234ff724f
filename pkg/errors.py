"""
Exception hierarchy for the SPI toolkit.

Library modules raise these; only the runner catches them.
"""

from typing import Optional


class SPIError(RuntimeError):
    pass


class SizeError(SPIError, ValueError):
    """Order / side / row count out of the supported range."""


class DimensionError(SPIError, ValueError):
    """Shapes that should agree do not."""


class DegenerateSignalError(SPIError):
    """Zero signal power where a finite SNR was requested."""


class OperatorError(SPIError):
    """Forward and adjoint operators are inconsistent."""


class NumericError(SPIError):
    """NaN or infinity where finite values are required."""


class ConfigError(SPIError):
    pass


class DataError(SPIError):
    pass


class FormatError(SPIError):
    """Malformed IDX / STL-10 / SPI1 bytes."""


class CheckpointError(SPIError):
    pass


class DegenerateStatisticsError(SPIError):
    """Correlation requested on a zero-variance input."""


class ReportError(SPIError):
    pass


class TrainingError(SPIError):
    """Training diverged. Carries the last finite parameter state."""

    def __init__(self, message: str, last_state: Optional[dict] = None, epoch: int = -1):
        super().__init__(message)
        self.last_state = last_state
        self.epoch = epoch
