"""Backend selection for the hot numeric kernels.

The environment variable AHIS_BACKEND picks the implementation:

  * ``numba`` -- require the JIT backend, raise if numba is unavailable
  * ``numpy`` -- force the pure-numpy fallback
  * ``auto``  -- (default) use numba when importable, else numpy

``set_backend`` switches at runtime (used by tests and the benchmark).
"""

from __future__ import annotations

import os

from . import numpy_backend

_KERNEL_NAMES = (
    "polyval_many",
    "polygrad_many",
    "newton_line_many",
    "chart_newton2_many",
)

_active = None
_active_name = ""


def set_backend(name: str) -> str:
    """Select 'numba', 'numpy' or 'auto'; returns the backend actually used."""
    global _active, _active_name
    if name == "numpy":
        _active, _active_name = numpy_backend, "numpy"
    elif name == "numba":
        from . import numba_backend
        _active, _active_name = numba_backend, "numba"
    elif name == "auto":
        try:
            from . import numba_backend
            _active, _active_name = numba_backend, "numba"
        except ImportError:
            _active, _active_name = numpy_backend, "numpy"
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    for fname in _KERNEL_NAMES:
        globals()[fname] = getattr(_active, fname)
    return _active_name


def backend_name() -> str:
    return _active_name


set_backend(os.environ.get("AHIS_BACKEND", "auto"))
