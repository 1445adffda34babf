"""Microfluidic molecular-communication link simulator and design toolkit."""

__version__ = "0.1.0"
