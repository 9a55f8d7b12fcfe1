"""Prioritized multi-agent path finding with congestion-inflated geometric
planning (GCP) and FIFO-queue execution (DLC)."""

__version__ = "0.1.0"
