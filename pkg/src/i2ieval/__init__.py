"""Image-to-image translation evaluation toolkit."""

__version__ = "0.1.0"
