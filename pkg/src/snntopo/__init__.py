"""Graph encodings and topological metrics for sparse neural networks."""

__version__ = "0.1.0"
