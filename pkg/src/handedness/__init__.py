"""Degree-of-handedness measurement from online handwriting kinematics."""

__version__ = "0.1.0"
