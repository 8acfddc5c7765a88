"""Heavy-tailed event-loss modelling: frequency/severity regression, tail
diagnostics, capital requirements and insurance pricing."""

__version__ = "0.1.0"

from ._kernels import backend as kernel_backend  # noqa: F401
