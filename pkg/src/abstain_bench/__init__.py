"""Selective classification baselines, calibration and a benchmark harness."""

__version__ = "0.1.0"
