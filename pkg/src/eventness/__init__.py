"""Eventness: region-proposal audio event detection on tri-channel log-mel images."""

__version__ = "0.1.0"
