"""Distributed H-infinity consensus observers with Round-Robin sampled interconnections."""

__version__ = "0.1.0"
