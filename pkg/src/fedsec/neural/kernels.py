"""Backend selection for the recurrence kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``FEDSEC_KERNELS=python`` to force the fallback (``compiled`` to require the
extension). Complex inputs always go through the fallback.
"""

import logging
import os

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

_choice = os.environ.get("FEDSEC_KERNELS", "auto").lower()
_compiled = None
if _choice != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]
    except ImportError as exc:  # pragma: no cover - depends on the build
        if _choice == "compiled":
            raise
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def have_compiled() -> bool:
    return _compiled is not None


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"compiled"``, ``"python"`` or None for the default)."""
    if name is None:
        name = BACKEND
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown kernel backend {name!r}")


def forward_scan(zx, mask, Uh, N, H, backend=None, h0=None, c0=None):
    mod = get_backend(backend)
    if mod is _compiled and any(np.iscomplexobj(a) for a in (zx, Uh, h0, c0) if a is not None):
        mod = _kernels_py
    if mod is _compiled:
        zx = np.ascontiguousarray(zx, dtype=np.float64)
        mask = np.ascontiguousarray(mask, dtype=np.float64)
        Uh = np.ascontiguousarray(Uh, dtype=np.float64)
    return mod.forward_scan(zx, mask, Uh, N, H, h0, c0)


def backward_scan(hs, cs, gates, tcs, mask, Uh, dh_final, N, H, backend=None):
    mod = get_backend(backend)
    if mod is _compiled and (np.iscomplexobj(gates) or np.iscomplexobj(dh_final) or np.iscomplexobj(Uh)):
        mod = _kernels_py
    if mod is _compiled:
        mask = np.ascontiguousarray(mask, dtype=np.float64)
        Uh = np.ascontiguousarray(Uh, dtype=np.float64)
        dh_final = np.ascontiguousarray(dh_final, dtype=np.float64)
    return mod.backward_scan(hs, cs, gates, tcs, mask, Uh, dh_final, N, H)
