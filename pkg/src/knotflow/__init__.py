"""Numerical engine for self-repulsive knot energies and their Sobolev gradient flows."""
