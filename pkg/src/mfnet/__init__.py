"""mfnet: pull and push network management over web-style transports."""

__version__ = "0.1.0"
