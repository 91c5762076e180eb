"""Adaptive P1 finite elements for recovering piecewise-constant conductivity
inclusions in a semilinear Neumann problem from boundary measurements."""

__version__ = "0.1.0"
