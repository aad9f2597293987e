"""Networked coherent radar imaging: simulation, synchronization and detection."""

__version__ = "0.1.0"
