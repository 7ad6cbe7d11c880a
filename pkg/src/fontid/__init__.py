"""Font identification for scanned historical documents with active learning."""

__version__ = "0.1.0"

from .ingest import CLASSES

__all__ = ["CLASSES", "__version__"]
