"""Numba acceleration switch.

Every hot kernel in :mod:`volcast.kernels` ships in two interchangeable
implementations: a ``@njit`` loop and a vectorized numpy path.  The numpy
path is selected when the environment variable ``VOLCAST_DISABLE_NUMBA``
is set to a truthy value, or when numba cannot be imported.  The flag is
read once at import time.
"""

import os

_flag = os.environ.get("VOLCAST_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag in {"1", "true", "yes", "on"}

NUMBA_AVAILABLE = False
if not NUMBA_DISABLED:
    try:
        from numba import njit  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:
        pass

USE_NUMBA = NUMBA_AVAILABLE

if not USE_NUMBA:

    def njit(*args, **kwargs):  # noqa: F811
        """Decorator stand-in so kernel modules import without numba."""

        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap
