"""Event graph embeddings: feature regularization plus multi-head graph attention."""

__version__ = "0.1.0"
