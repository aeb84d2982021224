"""Numerical laboratory for spectral cluster bounds with Lipschitz coefficients.

The half-wave machinery (metric truncation, Weyl quantization, unitary
propagation), the Gabor tube decomposition with its dyadic packet
bookkeeping, and the measurement harness live in the submodules below.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BandError,
    FactorizationError,
    ResolutionError,
    StepSizeError,
    SymbolClassError,
)
