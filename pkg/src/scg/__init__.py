"""Supply-chain APT detection on temporal provenance graphs."""

__version__ = "0.1.0"
