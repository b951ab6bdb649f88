"""Nested-dissection solver with a dynamic master/trader/worker scheduler."""

__version__ = "0.1.0"

from . import errors, mesh, metrics, scheduler, solver, tree  # noqa: F401
