"""solverforge: natural-language computational tasks to verified, optimized solver code."""

__version__ = "0.1.0"
