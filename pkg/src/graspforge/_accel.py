"""Backend selection for the numeric kernels.

The hot loops live in :mod:`graspforge.kernels` in two interchangeable
flavors: numba-jitted and pure numpy. Set ``GF_NO_NUMBA=1`` to force the
numpy fallback (useful on machines where numba is unavailable or while
debugging kernel semantics).
"""

import os

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("GF_NO_NUMBA", "0") != "1"


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
