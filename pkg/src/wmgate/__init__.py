"""Adaptive control of world-model imagination for spatial reasoning.

A synthetic 2D world, procedurally generated multiple-choice spatial
questions, calibrated synthetic model backends, and a controller that
decides per instance whether to imagine, how many views to render, and
which imagined trajectory to trust.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
