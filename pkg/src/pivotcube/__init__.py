"""Pivoting-cube satellite reconfiguration: lattice simulator and SAC-Discrete trainer."""

__version__ = "0.1.0"
