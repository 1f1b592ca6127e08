"""Marked random connection models on hyperbolic space: geometry, spectral
bounds on the uniqueness threshold, branching bounds on the percolation
threshold and a Monte-Carlo cluster simulator."""
__version__ = "0.1.0"
