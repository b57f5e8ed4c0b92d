"""Polar-coordinate regional analysis and classification of retinal OCTA stacks."""

__version__ = "0.1.0"
