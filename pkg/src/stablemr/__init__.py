"""Covering-number and stability bounds for structured matrix recovery, with desk-scale checks."""

__version__ = "0.1.0"
