"""Hot simulation kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when present; set the environment
variable ``TAILRISK_PURE_PYTHON=1`` before import to force the fallback
(useful for benchmarking and cross-checking the two paths).
"""

import os

from . import _pyfallback

try:
    from . import _core  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _core = None

if _core is not None and not os.environ.get("TAILRISK_PURE_PYTHON"):
    _impl = _core
    BACKEND = "cython"
else:
    _impl = _pyfallback
    BACKEND = "python"

pot_compound_sums = _impl.pot_compound_sums
pot_compound_capped_sums = _impl.pot_compound_capped_sums


def backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
