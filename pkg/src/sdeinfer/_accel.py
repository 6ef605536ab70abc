"""Numba toggle for the hot kernels.

Every hot kernel in this package exists twice: a numba ``@njit`` version and
a vectorized pure-numpy version.  Which one runs is decided once, at import
time, from the ``SDEINFER_DISABLE_NUMBA`` environment variable (set it to
``1`` to force the numpy path).  If numba is missing or fails to import, the
numpy path is used silently.  ``benchmarks/bench_kernels.py`` times the two
paths against each other.
"""

import os


def _flag_disabled() -> bool:
    val = os.environ.get("SDEINFER_DISABLE_NUMBA", "0").strip().lower()
    return val not in ("", "0", "false", "no")


NUMBA_ENABLED = False
if not _flag_disabled():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    from numba import njit
else:
    def njit(*args, **kwargs):
        """Pass-through decorator so kernel modules import without numba."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap
