"""Finite-element waveguide mode solver with modal Dirichlet-to-Neumann maps."""

__version__ = "0.1.0"
