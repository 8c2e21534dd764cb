"""Multipartite GHZ purification with recycling and entanglement link."""

__version__ = "0.1.0"
