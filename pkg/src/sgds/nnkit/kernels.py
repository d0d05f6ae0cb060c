"""Kernel backend selection.

The compiled extension is preferred when importable; ``SGDS_KERNELS`` forces
a choice (``ext``, ``py``, or ``auto``). Only the single-vector forward/vjp
pair is backend-switched; batched training math always runs on the NumPy
path, so checkpoints do not depend on the backend.
"""

import os

from . import _kernels_py

_choice = os.environ.get("SGDS_KERNELS", "auto").lower()
if _choice not in {"auto", "ext", "py"}:
    raise ValueError(f"SGDS_KERNELS must be 'auto', 'ext' or 'py', got {_choice!r}")

_ext = None
if _choice in {"auto", "ext"}:
    try:
        from . import _kernels as _ext
    except ImportError:
        if _choice == "ext":
            raise ImportError(
                "SGDS_KERNELS=ext but the compiled sgds.nnkit._kernels extension "
                "is not available; rebuild the package or use SGDS_KERNELS=py"
            ) from None

_active = _ext if _ext is not None else _kernels_py

BACKEND = _active.BACKEND_NAME

forward = _active.forward
vjp = _active.vjp
vjp_input = _active.vjp_input

# batched helpers are NumPy-only by design
forward_batch = _kernels_py.forward_batch
forward_batch_cache = _kernels_py.forward_batch_cache
forward_cache = _kernels_py.forward_cache
backward_from_cache = _kernels_py.backward_from_cache
