"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``OTDRMTL_BACKEND=python`` to force the numpy kernels.
"""

from __future__ import annotations

import os

from . import _pykernels

kernels = _pykernels
BACKEND = "python"

if os.environ.get("OTDRMTL_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        kernels = _ckernels
        BACKEND = "cython"
