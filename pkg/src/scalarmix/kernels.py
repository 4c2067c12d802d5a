"""Hot-kernel dispatch: the compiled extension when importable, else the numpy fallback.

Set ``SMIX_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from . import _pykernels

OPTIMAL = _pykernels.OPTIMAL
ITERATION_LIMIT = _pykernels.ITERATION_LIMIT

_ext = None
if os.environ.get("SMIX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"

if _ext is not None:
    interp_bicubic_periodic = _ext.interp_bicubic_periodic
    transport_simplex = _ext.transport_simplex
else:
    interp_bicubic_periodic = _pykernels.interp_bicubic_periodic
    transport_simplex = _pykernels.transport_simplex

__all__ = ["BACKEND", "interp_bicubic_periodic", "transport_simplex", "OPTIMAL", "ITERATION_LIMIT"]
