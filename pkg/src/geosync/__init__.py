"""Latency-aware synchronization planning and simulation for geo-replicated databases."""

__version__ = "0.1.0"
