"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback is used. ``SKULLREC_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("SKULLREC_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

im2col3d = _impl.im2col3d
col2im3d = _impl.col2im3d
# scipy's labeller (used by the fallback) outpaces the compiled union-find
label26 = _kernels_py.label26
resample_affine = _impl.resample_affine


def backends() -> dict:
    """All importable backends, keyed by name (used by tests and benchmarks)."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        found["cython"] = _compiled
    return found
