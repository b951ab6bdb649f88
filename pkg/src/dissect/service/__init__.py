"""HTTP service wrapping the solver: request/response models, handlers, app."""

from .app import create_app

__all__ = ["create_app"]
