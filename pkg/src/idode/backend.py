"""Selects between the compiled stepping core and the pure-python fallback.

The compiled extension is optional; when it failed to build (or when
``IDODE_BACKEND=python`` is set) everything runs through ``_pykernels``.
``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os

try:
    from idode import _ckernels as _native
except ImportError:  # extension not built
    _native = None

_MODES = ("auto", "native", "python")
_mode = os.environ.get("IDODE_BACKEND", "auto")
if _mode not in _MODES:
    raise ValueError(f"IDODE_BACKEND must be one of {_MODES}, got '{_mode}'")


def native_available() -> bool:
    return _native is not None


def get_backend_mode() -> str:
    return _mode


def set_backend_mode(mode: str) -> None:
    """Force a backend globally (mainly for tests and benchmarks)."""
    global _mode
    if mode not in _MODES:
        raise ValueError(f"backend mode must be one of {_MODES}, got '{mode}'")
    if mode == "native" and _native is None:
        raise RuntimeError("native backend requested but idode._ckernels is not built")
    _mode = mode


def resolve(kernel: str | None, override: str | None = None) -> str:
    """Return 'native' or 'python' for a system's kernel under current policy."""
    mode = override or _mode
    if mode not in _MODES:
        raise ValueError(f"backend mode must be one of {_MODES}, got '{mode}'")
    if mode == "python":
        return "python"
    has_kernel = (
        _native is not None and kernel is not None and kernel in _native.KERNEL_NAMES
    )
    if mode == "native":
        if not has_kernel:
            raise RuntimeError(
                f"native backend requested but no compiled kernel for {kernel!r}"
            )
        return "native"
    return "native" if has_kernel else "python"


def native_module():
    return _native
