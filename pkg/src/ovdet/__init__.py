"""Desk-scale open-vocabulary detector.

Unified detection/grounding/image-text data pipeline, a detection
transformer with gated language-aware query fusion, Hungarian-matched
region-text alignment losses, and a numpy reverse-mode autodiff engine
underneath. Hot gradient-free kernels (assignment, pairwise box overlap,
AP matching) have numba-compiled paths with pure-numpy fallbacks selected
by the OVDET_NUMBA environment variable.
"""

__version__ = "0.1.0"
