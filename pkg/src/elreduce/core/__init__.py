"""Core numerical modules."""
