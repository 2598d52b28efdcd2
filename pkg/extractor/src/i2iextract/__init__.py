"""Pretrained-network activation exporter for the evaluation toolkit."""

__version__ = "0.1.0"
