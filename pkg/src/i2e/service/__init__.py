"""HTTP service exposing refresh, ranked predictions, and ticker history."""

from .app import create_app

__all__ = ["create_app"]
