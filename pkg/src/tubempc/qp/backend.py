"""Kernel selection: compiled extension when importable, NumPy otherwise.

The environment variable TUBEMPC_QP_BACKEND forces a choice ("compiled"
or "python"); anything else (or unset) auto-selects.
"""

import os

from . import _ascore_py


def available_backends():
    """Importable kernels keyed by name."""
    out = {"python": _ascore_py}
    try:
        from . import _ascore  # compiled extension, absent on source-only installs

        out["compiled"] = _ascore
    except ImportError:
        pass
    return out


def _select():
    backends = available_backends()
    choice = os.environ.get("TUBEMPC_QP_BACKEND", "auto").strip().lower()
    if choice in ("python", "py"):
        return "python", backends["python"]
    if choice in ("compiled", "c", "ext"):
        if "compiled" not in backends:
            raise ImportError("TUBEMPC_QP_BACKEND=compiled but tubempc.qp._ascore is not built")
        return "compiled", backends["compiled"]
    if "compiled" in backends:
        return "compiled", backends["compiled"]
    return "python", backends["python"]


BACKEND_NAME, KERNEL = _select()
