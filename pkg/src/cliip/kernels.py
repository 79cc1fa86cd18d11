"""Kernel selection.

The compiled extension is used when it imports; otherwise the numpy versions.
Set ``CLIIP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pycore

BACKEND = "python"
_impl = _pycore

if os.environ.get("CLIIP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pycore

colocate_pairs = _impl.colocate_pairs
layer_counts = _impl.layer_counts
best_split = _impl.best_split

__all__ = ["BACKEND", "colocate_pairs", "layer_counts", "best_split"]
