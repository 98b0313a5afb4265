"""Ultraweak DPG for 2D time-harmonic acoustics with a multigrid-preconditioned CG solver.

Submodules are imported lazily so that the command-line entry point can
configure thread limits before numpy is loaded.
"""

__version__ = "0.1.0"
