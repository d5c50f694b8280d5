"""Baseline learning and anomaly scoring for host/network telemetry logs."""

__version__ = "0.1.0"
