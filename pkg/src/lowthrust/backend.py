"""Numba/numpy backend switch for the hot kernels.

Setting the environment variable ``LOWTHRUST_NUMBA=0`` before import selects
the pure-numpy fallback: every kernel decorated with :func:`jitted` then runs
as plain Python.  The default is to compile with numba when it is importable.
``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

_flag = os.environ.get("LOWTHRUST_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _flag not in ("0", "false", "no", "off")

if NUMBA_ENABLED:
    try:
        import numba as _numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def jitted(func):
        return _numba.njit(cache=True, fastmath=False)(func)
else:
    def jitted(func):
        return func


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
