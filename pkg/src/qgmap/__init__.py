"""Short-read mapping with an on-the-fly q-group index over buffered reads."""

__version__ = "0.1.0"
