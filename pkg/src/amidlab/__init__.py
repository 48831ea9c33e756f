"""Multi-interest cross-domain sequential recommendation with doubly robust debiasing."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
