"""Stereo visual odometry with constraint-filtered, circularly matched binary features."""

__version__ = "0.1.0"
