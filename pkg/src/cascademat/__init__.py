"""Coarse-to-fine cascade alpha matting with deformable graph refinement."""

from .tensor import Tensor, create, constant, set_nan_checks

__all__ = ["Tensor", "create", "constant", "set_nan_checks"]
