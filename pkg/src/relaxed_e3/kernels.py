"""Backend selection for the tensor-product kernels.

The compiled extension is used when it was built; otherwise, or when
``RELAXED_E3_KERNELS=python`` is set, the numpy/scipy fallback runs.
Both backends take batch-major float64 arrays and return the same numbers
(summation order aside).
"""
from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _tp_kernels
except ImportError:  # extension not built
    _tp_kernels = None


def _compiled_forward(prog, x, y, w):
    return _tp_kernels.forward(prog.path, prog.idx_in, prog.idx_filter, prog.idx_out,
                               prog.coef, prog.dim_out, x, y, w)


def _compiled_backward(prog, g, x, y, w):
    return _tp_kernels.backward(prog.path, prog.idx_in, prog.idx_filter, prog.idx_out,
                                prog.coef, prog.num_weights, g, x, y, w)


BACKENDS = {"python": (_kernels_py.tp_forward, _kernels_py.tp_backward)}
if _tp_kernels is not None:
    BACKENDS["compiled"] = (_compiled_forward, _compiled_backward)

BACKEND = ""
tp_forward = tp_backward = None


def use(name: str) -> None:
    """Switch backend at runtime (``"compiled"`` or ``"python"``)."""
    global BACKEND, tp_forward, tp_backward
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    BACKEND = name
    tp_forward, tp_backward = BACKENDS[name]


_requested = os.environ.get("RELAXED_E3_KERNELS", "auto").lower()
if _requested == "auto":
    use("compiled" if "compiled" in BACKENDS else "python")
else:
    use(_requested)
