"""Public goods index measurement, openness dynamics and policy simulation for AI models."""

__version__ = "0.1.0"
