"""Simulation toolkit for broadcast group key management on PUF-equipped smart meters."""

__version__ = "0.1.0"
