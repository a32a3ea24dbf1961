"""Deterministic discrete-event simulator of the 5G NR RAN timing plane."""

__version__ = "0.1.0"
