"""Budget-aware differentially private data exploration engine."""

__version__ = "0.1.0"
