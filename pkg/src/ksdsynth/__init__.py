"""Dissipative state-feedback synthesis for linear systems with distributed delays."""

__version__ = "0.1.0"
