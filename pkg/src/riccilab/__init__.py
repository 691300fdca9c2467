"""riccilab: a numerical laboratory for two-dimensional Ricci flow in conformal gauge."""

__version__ = "0.1.0"
