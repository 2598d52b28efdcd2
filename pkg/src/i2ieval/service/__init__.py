"""HTTP service exposing the evaluation jobs."""

from .app import create_app

__all__ = ["create_app"]
