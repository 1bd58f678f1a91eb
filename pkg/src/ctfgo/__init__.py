"""Continuous-time factor-graph fusion of GNSS, IMU, odometry and speed data."""

__version__ = "0.1.0"
