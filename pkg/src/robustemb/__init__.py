"""Robust word embeddings through word-level triplet metric learning.

Trains a small text classifier jointly on cross-entropy and a per-word
triplet penalty that pulls synonyms together and pushes sampled
non-synonyms apart, then measures robustness with synonym-substitution
attacks.
"""

__version__ = "0.1.0"
