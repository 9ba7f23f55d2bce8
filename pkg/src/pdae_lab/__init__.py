"""Modal analysis, stability certificates and simulation for linear and semilinear PDAEs."""

__version__ = "0.1.0"
