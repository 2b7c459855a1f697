"""High-precision splitting of separatrices for odd-in-time Klein-Gordon breathers."""

from kgsplit.precision import PrecisionContext, required_bits

__version__ = "0.1.0"

__all__ = ["PrecisionContext", "required_bits", "__version__"]
