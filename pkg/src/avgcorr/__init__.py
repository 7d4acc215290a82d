"""Averaging correction for the discount-factor mismatch in on-policy policy gradients."""

__version__ = "0.1.0"
