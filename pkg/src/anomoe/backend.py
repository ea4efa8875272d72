"""Select the compiled or the numpy kernel backend at import time.

The compiled extension ``anomoe._core`` is preferred when it imported
cleanly; otherwise the numpy twin ``anomoe._core_py`` is used. Set
``ANOMOE_BACKEND=python`` or ``ANOMOE_BACKEND=cython`` to force one
(forcing ``cython`` raises if the extension is missing).

Model calibration and detection should run on the same backend: the
anomaly boundary is an exact equality at the calibration maximum, and the
two backends can differ in the last few ulps.
"""

from __future__ import annotations

import os
from types import ModuleType


def load_backend(name: str) -> ModuleType:
    """Import one backend by name ("cython" or "python")."""
    if name == "cython":
        from anomoe import _core  # type: ignore[attr-defined]

        return _core
    if name == "python":
        from anomoe import _core_py

        return _core_py
    raise ValueError(f"unknown backend {name!r}; expected 'cython' or 'python'")


def available_backends() -> tuple[str, ...]:
    names = []
    try:
        load_backend("cython")
        names.append("cython")
    except ImportError:
        pass
    names.append("python")
    return tuple(names)


def _select() -> ModuleType:
    forced = os.environ.get("ANOMOE_BACKEND", "").strip().lower()
    if forced:
        return load_backend(forced)
    try:
        return load_backend("cython")
    except ImportError:
        return load_backend("python")


_impl = _select()

BACKEND_NAME: str = _impl.NAME
component_logpdfs = _impl.component_logpdfs
gmr_moments = _impl.gmr_moments
mahalanobis_batch = _impl.mahalanobis_batch
