"""Hyper-reduced Galerkin ROMs with POD-Greedy sampling for a coupled
thermo-hydro-mechanical finite-element model."""

__version__ = "0.1.0"
