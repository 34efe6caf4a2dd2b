"""Stationary mean field games with polygonal inclusions and CGO corner probes."""

__version__ = "0.1.0"
