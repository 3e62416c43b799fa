"""Exponentially fitted nonconforming finite elements for 2-D drift-diffusion."""

__version__ = "0.1.0"
