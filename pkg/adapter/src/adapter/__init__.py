"""HTTP adapter exposing transformer checkpoints over the decoding wire protocol."""

__version__ = "0.1.0"
