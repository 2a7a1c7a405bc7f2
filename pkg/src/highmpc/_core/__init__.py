"""Solver kernel backend selection.

The compiled Cython extension is used when available; the pure-numpy
implementation is the fallback. Set ``HIGHMPC_PURE_PY=1`` to force the
fallback (useful for debugging and for the backend benchmark).
"""

import os

from . import kernels_py

if os.environ.get("HIGHMPC_PURE_PY", "0") == "1":
    _impl = kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = kernels_py
        BACKEND = "python"

rollout = _impl.rollout
linearize = _impl.linearize
forward_pass = _impl.forward_pass
solve_ocp = _impl.solve_ocp
step_jacobians = kernels_py.step_jacobians
