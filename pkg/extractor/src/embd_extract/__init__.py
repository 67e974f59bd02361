"""Batch image feature extraction into EMBD embedding files."""

__version__ = "0.1.0"

from .extract import extract  # noqa: F401
from .manifest import ExtractionManifest  # noqa: F401
from .models import load_backbone  # noqa: F401
