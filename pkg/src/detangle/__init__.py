"""Nonlinear master-equation dynamics with spontaneous disentanglement."""

__version__ = "0.1.0"
