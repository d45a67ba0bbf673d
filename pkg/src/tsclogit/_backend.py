"""Select the compiled kernels when available, else the numpy fallback.

Set ``TSCLOGIT_BACKEND=python`` to force the fallback, or ``cython`` to make a
missing extension an import error.
"""

import os

_choice = os.environ.get("TSCLOGIT_BACKEND", "").strip().lower()

if _choice == "python":
    from . import _fallback as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        from . import _fallback as kernels

        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
