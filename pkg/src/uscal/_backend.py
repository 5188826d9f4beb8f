"""Selection between the numba-compiled kernels and the pure-numpy path.

The numpy path is always available.  The numba path is used when numba
imports cleanly and ``USCAL_DISABLE_NUMBA`` is unset or false-y.  Tests and
the kernel benchmark switch at runtime with :func:`use_backend`.
"""
from __future__ import annotations

import contextlib
import os

_FALSEY = {"", "0", "false", "no", "off"}


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except Exception:  # pragma: no cover - depends on the environment
        return False
    return True


HAVE_NUMBA = _numba_importable()
_disabled = os.environ.get("USCAL_DISABLE_NUMBA", "").strip().lower() not in _FALSEY
_current = "numba" if (HAVE_NUMBA and not _disabled) else "numpy"


def get_backend() -> str:
    return _current


def set_backend(name: str) -> None:
    global _current
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _current = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _current
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def set_threads(n: int | None) -> None:
    """Limit numba's thread pool (no-op without numba)."""
    if n is None or not HAVE_NUMBA:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
