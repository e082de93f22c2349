"""Deep network model of finger counting and numerosity estimation."""

__version__ = "0.1.0"
