"""Weisfeiler-Leman tests, analytic PPGNs and an equivariant point-cloud network."""
from . import geometry, ppgn, tensor_core, welnet, wl

__version__ = "0.1.0"

__all__ = ["geometry", "ppgn", "tensor_core", "welnet", "wl", "__version__"]
