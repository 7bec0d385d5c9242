"""curvlab: intermediate curvature, weighted-area variations and slicing checks."""

__version__ = "0.1.0"
