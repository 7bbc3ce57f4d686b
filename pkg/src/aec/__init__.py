"""Accountable error characterization for black-box text classifiers."""

__version__ = "0.1.0"
