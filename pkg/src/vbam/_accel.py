"""Numba acceleration layer.

Hot kernels in this package are written once, as plain numpy functions, and
compiled with numba when it is available.  The pure-numpy twin of every
kernel stays callable, so results can be cross-checked and the package keeps
working without a compiler.

Set ``VBAM_NUMBA=0`` in the environment to force the numpy path everywhere;
individual entry points also accept ``backend="numpy" | "numba"`` overrides.
"""

from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_ENV_FLAG = os.environ.get("VBAM_NUMBA", "auto").strip().lower()

#: True when kernels default to the compiled path.
NUMBA_DEFAULT = HAVE_NUMBA and _ENV_FLAG not in ("0", "false", "off", "no")


def jit_compile(fn):
    """Compile ``fn`` in nopython mode (nogil, so chains can run on threads)."""
    if not HAVE_NUMBA:
        raise RuntimeError(
            "numba is not installed; only the numpy backend is available"
        )
    return numba.njit(nogil=True)(fn)


def use_numba(backend: str | None) -> bool:
    """Resolve a backend request to a concrete choice.

    ``None`` and ``"auto"`` follow the package default (env flag + numba
    availability); ``"numba"`` and ``"numpy"`` force one side.
    """
    if backend is None or backend == "auto":
        return NUMBA_DEFAULT
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("backend='numba' requested but numba is not installed")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}; expected 'auto', 'numba' or 'numpy'")
