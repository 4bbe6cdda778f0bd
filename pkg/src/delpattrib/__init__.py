"""Defeasible logic programming engine and argumentation-based cyber attribution."""

__version__ = "0.1.0"
