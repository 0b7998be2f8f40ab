"""Deterministic rehabilitation-arm simulation lab.

A 1-DOF effective-mass end effector under adaptive impedance control,
driven by a simulated patient through a compliant coupling, observed by
three noisy multi-rate sensors.
"""

__version__ = "0.1.0"
