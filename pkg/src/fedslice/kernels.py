"""Kernel backend selection.

The compiled extension is used when it imports; set ``FEDSLICE_PURE_PYTHON=1``
to force the reference implementation.
"""

import os

from . import _kernels_py

BACKEND = "python"
solve_local = _kernels_py.solve_local

if os.environ.get("FEDSLICE_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        solve_local = _compiled.solve_local
        BACKEND = "cython"

OK = _kernels_py.OK
INFEASIBLE = _kernels_py.INFEASIBLE
MAXITER = _kernels_py.MAXITER
feasible_start = _kernels_py.feasible_start
reference_solve_local = _kernels_py.solve_local
