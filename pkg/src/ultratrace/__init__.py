"""Acoustic contact tracing: rolling IDs, an ultrasonic modem, a broadcast
MAC, a simulated room, and a DRID matching server."""

__version__ = "0.1.0"
