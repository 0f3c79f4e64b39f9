"""Manifold-embedding active learning for patch-wise semantic segmentation."""

__version__ = "0.1.0"
