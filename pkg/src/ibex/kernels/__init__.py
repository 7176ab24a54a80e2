"""Hot numeric kernels with a compiled core and a numpy fallback.

The Cython extension ``ibex.kernels._core`` is preferred when importable;
otherwise the numpy implementations serve. Selection happens once at
import and can be overridden with :func:`set_backend` or the
``IBEX_KERNELS`` environment variable ("auto", "compiled", "numpy").
Both backends are single-threaded and run-to-run deterministic.
"""

from __future__ import annotations

import os

from . import _numpy as _numpy_backend

try:
    from . import _core as _compiled_backend
except ImportError:
    _compiled_backend = None

Q_EPS = _numpy_backend.Q_EPS
CLAMP_LO = _numpy_backend.CLAMP_LO
CLAMP_HI = _numpy_backend.CLAMP_HI

_active = None
_active_name = ""


def available_backends() -> list[str]:
    names = ["numpy"]
    if _compiled_backend is not None:
        names.insert(0, "compiled")
    return names


def set_backend(name: str) -> str:
    """Select the kernel backend; returns the name actually activated."""
    global _active, _active_name
    if name == "auto":
        name = "compiled" if _compiled_backend is not None else "numpy"
    if name == "compiled":
        if _compiled_backend is None:
            raise RuntimeError("compiled kernel extension is not available")
        _active = _compiled_backend
    elif name == "numpy":
        _active = _numpy_backend
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    _active_name = name
    return name


def backend_name() -> str:
    return _active_name


def get_backend(name: str):
    """Return a backend module by name (for benchmarks and parity tests)."""
    if name == "compiled":
        if _compiled_backend is None:
            raise RuntimeError("compiled kernel extension is not available")
        return _compiled_backend
    if name == "numpy":
        return _numpy_backend
    raise ValueError(f"unknown kernel backend {name!r}")


def sparsity_loss_grad(y):
    return _active.sparsity_loss_grad(y)


def max_activation_loss_grad(y):
    return _active.max_activation_loss_grad(y)


def inactive_loss_grad(y, nu, gamma):
    return _active.inactive_loss_grad(y, nu, gamma)


def upsample_bilinear(src, out_h, out_w):
    return _active.upsample_bilinear(src, out_h, out_w)


def overlap_counts(maps, masks):
    return _active.overlap_counts(maps, masks)


set_backend(os.environ.get("IBEX_KERNELS", "auto"))
