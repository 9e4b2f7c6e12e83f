"""TPL Health Monitor - statistical machine-health monitoring for two-photon lithography."""

__version__ = "0.1.0"
