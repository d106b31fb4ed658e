"""Kernel backend selection: compiled Cython core with a pure-NumPy fallback.

The compiled module is preferred when importable; set SNAPLATTICE_BACKEND to
"pure" or "compiled" to force one (forcing "compiled" raises if the extension
is missing).
"""

import os

from . import pure

_requested = os.environ.get("SNAPLATTICE_BACKEND", "").lower()

if _requested == "pure":
    active = pure
else:
    try:
        from . import _core as active  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
        active = pure

BACKEND_NAME = active.BACKEND_NAME


def get_backend(name: str):
    """Return a backend module by name ("pure" or "compiled")."""
    if name == "pure":
        return pure
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
