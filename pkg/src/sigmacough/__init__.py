"""Cough pre-screening by transfer from a spoken-digit CNN, plus the Sigma sample service."""

__version__ = "0.1.0"
