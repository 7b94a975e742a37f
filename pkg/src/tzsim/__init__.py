"""Discrete-time simulator of edge-cloud security reliability under an unreliable backhaul."""

__version__ = "0.1.0"
