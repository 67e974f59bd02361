"""Replay-free class-incremental learning on frozen embedding vectors."""

__version__ = "0.1.0"

from . import dataio, hyperbolic, metrics, mlp, projections, prototypes, runner  # noqa: F401
