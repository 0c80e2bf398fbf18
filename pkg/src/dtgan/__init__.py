"""Trajectory prediction with random-weight graph attention and a WGAN critic, on numpy."""

__version__ = "0.1.0"
