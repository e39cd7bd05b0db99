"""Linearized elastic inverse problem laboratory built on CGO solutions."""

__version__ = "0.1.0"
