"""Multiple conditional node embeddings from a social graph and
multi-category implicit feedback."""

__version__ = "0.1.0"
