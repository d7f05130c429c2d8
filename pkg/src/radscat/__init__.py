"""Radial Schrodinger scattering laboratory: grids, dilation calculus,
split-step evolution, propagation observables and channel decomposition."""

__version__ = "0.1.0"
