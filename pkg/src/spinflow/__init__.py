"""Geodesic spinor-transport symbol calculus on framed 3-manifolds."""

__version__ = "0.1.0"
