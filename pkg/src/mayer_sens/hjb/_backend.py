"""Pick the sweep kernel: compiled extension when importable, numpy otherwise.

``MAYER_SENS_BACKEND`` forces a choice (``compiled`` or ``python``).
"""

import os

from . import _sweep_py

try:
    from . import _sweep as _compiled
except ImportError:  # extension not built
    _compiled = None

COMPILED_AVAILABLE = _compiled is not None


def default_name():
    forced = os.environ.get("MAYER_SENS_BACKEND", "").strip().lower()
    if forced in ("python", "numpy"):
        return "python"
    if forced == "compiled" and not COMPILED_AVAILABLE:
        raise ImportError("MAYER_SENS_BACKEND=compiled but the extension is not built")
    return "compiled" if COMPILED_AVAILABLE else "python"


def get(name=None):
    name = default_name() if name is None else name
    if name == "compiled":
        if not COMPILED_AVAILABLE:
            raise ImportError("compiled sweep kernel is not available")
        return _compiled.sweep, "compiled"
    if name == "python":
        return _sweep_py.sweep, "python"
    raise ValueError(f"unknown backend {name!r}")
