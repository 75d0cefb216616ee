"""Finite-horizon system level synthesis and a layered MPC controller for swing-equation grids."""

__version__ = "0.1.0"
