"""Primitive lattice point counts and numerical checks on SL_m(R) orbits."""

__version__ = "0.1.0"
