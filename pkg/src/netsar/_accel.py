"""JIT switch.

Numba is used for the hot kernels unless ``NETSAR_NUMBA`` is set to a false
value (``0``, ``false``, ``off``), in which case the pure-numpy code paths in
:mod:`netsar.kernels` are used instead. The decorators below degrade to no-ops
so that kernel definitions stay importable either way.
"""

import os
import warnings

_FALSY = {"0", "false", "no", "off"}

NUMBA_REQUESTED = os.environ.get("NETSAR_NUMBA", "1").strip().lower() not in _FALSY

# numba probes for TBB on import and warns when an old version is found; the
# workqueue/omp layers are used instead so the warning carries no information
warnings.filterwarnings("ignore", message=".*TBB.*")

try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA

if HAVE_NUMBA:
    njit = _numba.njit
    prange = _numba.prange
else:  # pragma: no cover

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper

    prange = range
