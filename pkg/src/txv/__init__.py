"""txv: multi-space text-to-video retrieval engine."""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
