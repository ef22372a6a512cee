"""Sliding-window visual-inertial odometry with learned, per-axis IMU process noise."""

__version__ = "0.1.0"
