"""Deterministic simulator and protocol library for self-tuning WDM
fronthaul transceivers with an out-of-band management channel."""

__version__ = "0.1.0"
