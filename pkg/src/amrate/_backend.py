"""Pick the kernel backend once, at import.

``AMRATE_BACKEND=python`` forces the pure-Python kernels; ``compiled``
makes a missing extension an ImportError instead of a silent fallback.
"""
import os

from . import _pykernels

_choice = os.environ.get("AMRATE_BACKEND", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"AMRATE_BACKEND must be auto, compiled or python, got {_choice!r}")

kernels = _pykernels
name = "python"
if _choice != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
        name = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = _pykernels

KernelSingularError = kernels.KernelSingularError
