"""Kernel dispatch: the compiled extension when it built, the Python twins otherwise.

Set ``AVGCORR_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("AVGCORR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

simulate_tabular = _impl.simulate_tabular
gae = _impl.gae
cartpole_rollout = _impl.cartpole_rollout

__all__ = ["BACKEND", "simulate_tabular", "gae", "cartpole_rollout"]
