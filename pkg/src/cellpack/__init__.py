"""Cell configurations, circle packings, weighted walks, and discrete
conformal embeddings — a numerical laboratory for random planar geometry."""

__version__ = "0.1.0"
