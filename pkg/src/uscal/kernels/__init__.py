"""Backend-dispatching entry points for the O(PNMLT) contractions.

Call sites use ``kernels.get(name, deterministic)``; the active backend is
chosen by :mod:`uscal._backend`.
"""
from __future__ import annotations

import numpy as np

from .. import _backend
from . import _numpy

NAMES = (
    "project_gain",
    "gain_numerator",
    "residual_energy",
    "steering_tx_terms",
    "steering_rx_terms",
    "phase_terms",
    "magnitude_tx_terms",
    "magnitude_rx_terms",
)

_numba_mod = None


def _numba_table(deterministic: bool):
    global _numba_mod
    if _numba_mod is None:
        from . import _numba as mod

        _numba_mod = mod
    return _numba_mod.serial if deterministic else _numba_mod.parallel


def get(name: str, deterministic: bool = True):
    if name not in NAMES:
        raise KeyError(name)
    if _backend.get_backend() == "numba":
        return _numba_table(deterministic)[name]
    return getattr(_numpy, name)


def contiguous(*arrays):
    return tuple(np.ascontiguousarray(a) for a in arrays)
