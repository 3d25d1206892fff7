"""String-based universal offline black-box optimization."""

__version__ = "0.1.0"
