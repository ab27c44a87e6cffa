"""HTTP inference service for chemistry named-entity recognition."""

__version__ = "0.1.0"

from .app import Settings, create_app
from .models import LexiconModel, Span, build_model, resolve_overlaps

__all__ = ["Settings", "create_app", "LexiconModel", "Span", "build_model", "resolve_overlaps"]
