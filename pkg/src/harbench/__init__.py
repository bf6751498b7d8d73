# src/harbench/__init__.py
"""Deep-learning benchmark harness for activity recognition."""

__version__ = "0.1.0"
