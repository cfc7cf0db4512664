"""Projection time-stepping for mechanical systems with a unilateral constraint and restitution."""

__version__ = "0.1.0"
