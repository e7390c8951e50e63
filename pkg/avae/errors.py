"""
avae/errors.py

Exception types raised across the engine.
Every error carries a machine-readable code and a message, the same pair the
service layer returns as {"error": {"code": ..., "message": ...}}.
"""


class AvaeError(Exception):
    code = "AVAE_ERROR"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_dict(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


class DimensionError(AvaeError):
    """Shape contract violated by a tensor operation or a model input."""
    code = "DIMENSION_MISMATCH"


class UsageError(AvaeError):
    """API or command-line misuse: missing gradients, empty sets, bad arguments."""
    code = "USAGE_ERROR"


class NumericError(AvaeError):
    """NaN or Inf in a tensor or a loss."""
    code = "NON_FINITE"


class FormatError(AvaeError):
    """Checkpoint container is not readable: bad magic, version or truncation."""
    code = "BAD_CHECKPOINT"


class DatasetError(AvaeError):
    """Image folder or attribute table is unreadable or inconsistent."""
    code = "BAD_DATASET"


class StorageError(AvaeError):
    """Reading or writing an output file failed."""
    code = "IO_ERROR"


class InternalError(AvaeError):
    """Unexpected failure surfaced by the service layer."""
    code = "INTERNAL_ERROR"
