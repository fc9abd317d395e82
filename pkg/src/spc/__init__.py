"""Selective pseudo-label clustering with an autoencoder ensemble."""

from .errors import ConfigError, DataError, NumericError, SpcError

__all__ = ["SpcError", "ConfigError", "DataError", "NumericError"]
__version__ = "0.1.0"
