"""Forward-forward training and inference engine (CPU, numpy)."""

__version__ = "0.1.0"
