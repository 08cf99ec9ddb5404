"""Nested Invariance Pooling descriptors and RBM hashing for image instance retrieval."""

__version__ = "0.1.0"
