"""Distributed Kalman-filter frequency and phase synchronization for open-loop distributed arrays."""

__version__ = "0.1.0"
