"""Continual few-shot adaptation of a real-vs-synthetic detector on procedural fingerprint-like data."""

__version__ = "0.1.0"
