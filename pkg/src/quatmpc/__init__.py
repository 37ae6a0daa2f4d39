"""Quaternion-native SRB model-predictive control with an augmented-Lagrangian iLQR solver."""

__version__ = "0.1.0"
