"""Dispersion curves for viscoelastic waveguides.

The pipeline solves the lossless (Hermitian) waveguide on an adaptively
refined wavenumber grid, thins the labeled solutions to key points, and
transports each key point to the lossy target by predictor-corrector
continuation in the material loss parameter, with exceptional-point
diagnostics and independent verification oracles.
"""

__version__ = "0.1.0"

from .materials import (
    LaminateSpec,
    MaterialTensor,
    Normalization,
    Ply,
    builtin_registry,
    effective_loss_factor,
    homotopy_stiffness,
    rotate_stiffness,
)

__all__ = [
    "LaminateSpec",
    "MaterialTensor",
    "Normalization",
    "Ply",
    "builtin_registry",
    "effective_loss_factor",
    "homotopy_stiffness",
    "rotate_stiffness",
    "__version__",
]
