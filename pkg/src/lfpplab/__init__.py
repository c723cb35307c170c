"""Simulation laboratory for Liouville first passage percolation."""

__version__ = "0.1.0"
