"""Kinetic and hydrodynamic models of body-attitude alignment on SO(3)."""

__version__ = "0.1.0"
