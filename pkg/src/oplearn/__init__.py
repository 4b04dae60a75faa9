"""Learning verified planning operators from noisy proposals."""

__version__ = "0.1.0"
