"""PIE conversion, LPI certification and controller synthesis for coupled ODE-PDE systems."""

__version__ = "0.1.0"
