"""HTTP service wrapping the projection and inference engine."""

from .app import create_app

__all__ = ["create_app"]
