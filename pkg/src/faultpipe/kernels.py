"""Tree kernels: the compiled extension when available, otherwise pure Python.

Set ``FAULTPIPE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from faultpipe import _kernels_py

BACKEND = "python"
if not os.environ.get("FAULTPIPE_PURE_PYTHON"):
    try:
        from faultpipe import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

grow_tree = _impl.grow_tree
apply_tree = _impl.apply_tree

__all__ = ["BACKEND", "grow_tree", "apply_tree"]
