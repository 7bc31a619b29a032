"""El-Reduce - finite-dimensional reduction engine for the Einstein-Lichnerowicz system."""

__version__ = "0.1.0"
