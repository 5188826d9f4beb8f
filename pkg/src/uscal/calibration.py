"""Joint calibration of the coupled array model by block coordinate descent.

Every block (transmit steering, receive steering, phase response, transmit
and receive magnitude responses, pulse gains) has a closed-form minimizer
when the other blocks are fixed.  The scaling constraints are dropped inside
each block update and restored afterwards by :func:`rescale`, which leaves
the modeled tensors unchanged, so the cost never increases.

All per-position quantities are stored stacked along a leading axis:
``a_tx`` (P, N), ``a_rx`` (P, M), ``c`` (P, L), ``h`` (P, T); the shared
magnitude responses are ``g_tx`` (L, N) and ``g_rx`` (L, M).
"""
from __future__ import annotations

import csv
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .model import (
    DEFAULT_EPSILON,
    PositionParams,
    SharedParams,
    TargetPosition,
    canonical_phase_scale,
    response_tensor,
)

log = logging.getLogger(__name__)

__all__ = [
    "BLOCKS",
    "BcdConfig",
    "CalibrationSet",
    "BcdState",
    "CalibrationEstimate",
    "initialize",
    "update_a_tx",
    "update_a_rx",
    "update_c",
    "update_g_tx",
    "update_g_rx",
    "update_h",
    "rescale",
    "normalized_cost",
    "calibrate",
]

BLOCKS = ("a_tx", "a_rx", "c", "g_tx", "g_rx", "h", "rescale")


@dataclass
class BcdConfig:
    epsilon: float = DEFAULT_EPSILON
    tol: float = 1e-6
    max_iter: int = 500
    deterministic: bool = True

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        self.max_iter = int(self.max_iter)


@dataclass
class CalibrationSet:
    """Calibration tensors stacked as (P, N, M, L, T) plus known positions."""

    tensors: np.ndarray
    positions: Optional[Sequence[TargetPosition]] = None

    def __post_init__(self):
        if isinstance(self.tensors, (list, tuple)):
            shapes = {np.shape(t) for t in self.tensors}
            if len(shapes) > 1:
                raise ValueError(f"calibration tensors differ in shape: {sorted(shapes)}")
        y = np.ascontiguousarray(np.asarray(self.tensors, dtype=np.complex128))
        if y.ndim == 4:
            y = y[None]
        if y.ndim != 5 or min(y.shape) < 1:
            raise ValueError(f"expected (P, N, M, L, T) tensors, got shape {y.shape}")
        self.tensors = y
        if self.positions is not None:
            self.positions = list(self.positions)
            if len(self.positions) != y.shape[0]:
                raise ValueError("one position record is required per tensor")

    @property
    def shape(self):
        return self.tensors.shape

    def __len__(self):
        return self.tensors.shape[0]


@dataclass
class BcdState:
    g_tx: np.ndarray
    g_rx: np.ndarray
    a_tx: np.ndarray
    a_rx: np.ndarray
    c: np.ndarray
    h: np.ndarray
    flags: Counter = field(default_factory=Counter)

    def copy(self) -> "BcdState":
        return BcdState(
            self.g_tx.copy(), self.g_rx.copy(), self.a_tx.copy(), self.a_rx.copy(),
            self.c.copy(), self.h.copy(), Counter(self.flags),
        )

    def response(self) -> np.ndarray:
        """Array responses ``Q`` stacked as (P, N, M, L)."""
        return response_tensor(self.g_tx, self.g_rx, self.a_tx, self.a_rx, self.c)

    def model(self) -> np.ndarray:
        return self.response()[..., None] * self.h[:, None, None, None, :]

    @property
    def shared(self) -> SharedParams:
        return SharedParams(self.g_tx.copy(), self.g_rx.copy())

    def position(self, p: int) -> PositionParams:
        return PositionParams(self.a_tx[p].copy(), self.a_rx[p].copy(), self.c[p].copy(), self.h[p].copy())


@dataclass
class CalibrationEstimate:
    """Result of :func:`calibrate`.

    ``trace[i]`` is the normalized cost after iteration ``i`` (index 0 is the
    initialization); ``block_costs[i - 1, k]`` is the normalized cost right
    after block ``BLOCKS[k]`` of iteration ``i``.  ``used`` maps estimate rows
    to indices of the input set; positions listed in ``excluded`` carried no
    signal and were skipped.
    """

    state: BcdState
    trace: np.ndarray
    block_costs: np.ndarray
    used: list
    excluded: list
    converged: bool
    final_cost: float
    positions: Optional[list] = None

    @property
    def shared(self) -> SharedParams:
        return self.state.shared

    @property
    def per_position(self) -> list:
        return [self.state.position(p) for p in range(self.state.a_tx.shape[0])]

    @property
    def n_iter(self) -> int:
        return len(self.trace) - 1

    @property
    def flags(self) -> Counter:
        return self.state.flags

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "f_rel", *BLOCKS])
            w.writerow([0, repr(float(self.trace[0]))] + [""] * len(BLOCKS))
            for i in range(1, len(self.trace)):
                w.writerow([i, repr(float(self.trace[i]))] + [repr(float(v)) for v in self.block_costs[i - 1]])


def _t_average(y: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, y.ndim - 1))
    return np.mean(np.abs(y.real), axis=axes) + 1j * np.mean(np.abs(y.imag), axis=axes)


def initialize(data) -> BcdState:
    """All-ones factors with pulse gains set to the complex snapshot average."""
    y = data.tensors if isinstance(data, CalibrationSet) else np.asarray(data)
    if y.ndim == 4:
        y = y[None]
    P, N, M, L, T = y.shape
    return BcdState(
        g_tx=np.ones((L, N)),
        g_rx=np.ones((L, M)),
        a_tx=np.ones((P, N), dtype=np.complex128),
        a_rx=np.ones((P, M), dtype=np.complex128),
        c=np.ones((P, L), dtype=np.complex128),
        h=_t_average(y).astype(np.complex128),
    )


def _hnorm2(state: BcdState) -> np.ndarray:
    return np.sum(state.h.real**2 + state.h.imag**2, axis=1)


def _project(Y, state, deterministic=True):
    Y, h = kernels.contiguous(Y, state.h)
    return kernels.get("project_gain", deterministic)(Y, h)


def _guarded_ratio(num, den, previous, flags: Counter, name: str):
    ok = den > 0
    bad = int(np.size(ok) - np.count_nonzero(ok))
    if bad:
        flags[name] += bad
    safe = np.where(ok, den, 1.0)
    return np.where(ok, num / safe, previous)


def update_a_tx(Y, state: BcdState, W=None, deterministic: bool = True) -> np.ndarray:
    """Closed-form transmit steering update, decoupled over (p, n)."""
    W = _project(Y, state, deterministic) if W is None else W
    num, den = kernels.get("steering_tx_terms", deterministic)(
        *kernels.contiguous(W, state.a_rx, state.c, state.g_tx, state.g_rx)
    )
    den = den * _hnorm2(state)[:, None]
    return _guarded_ratio(num, den, state.a_tx, state.flags, "a_tx")


def update_a_rx(Y, state: BcdState, W=None, deterministic: bool = True) -> np.ndarray:
    """Closed-form receive steering update, decoupled over (p, m)."""
    W = _project(Y, state, deterministic) if W is None else W
    num, den = kernels.get("steering_rx_terms", deterministic)(
        *kernels.contiguous(W, state.a_tx, state.c, state.g_tx, state.g_rx)
    )
    den = den * _hnorm2(state)[:, None]
    return _guarded_ratio(num, den, state.a_rx, state.flags, "a_rx")


def update_c(Y, state: BcdState, W=None, deterministic: bool = True) -> np.ndarray:
    """Unit-modulus phase response: the phase of the matched correlation."""
    W = _project(Y, state, deterministic) if W is None else W
    S = kernels.get("phase_terms", deterministic)(
        *kernels.contiguous(W, state.a_tx, state.a_rx, state.g_tx, state.g_rx)
    )
    mag = np.abs(S)
    return _guarded_ratio(S, mag, state.c, state.flags, "c")


def _clip(x, eps):
    return np.clip(x, eps, 1.0)


def update_g_tx(Y, state: BcdState, eps: float = DEFAULT_EPSILON, W=None, deterministic: bool = True) -> np.ndarray:
    """Transmit magnitude responses: LS over all positions, projected onto [eps, 1].

    Column 0 is the reference transmitter and stays all-ones.
    """
    W = _project(Y, state, deterministic) if W is None else W
    num, den = kernels.get("magnitude_tx_terms", deterministic)(
        *kernels.contiguous(W, state.a_tx, state.a_rx, state.c, state.g_rx, _hnorm2(state))
    )
    g = state.g_tx.copy()
    if g.shape[1] > 1:
        ls = _guarded_ratio(num[:, 1:], den[:, 1:], g[:, 1:], state.flags, "g_tx")
        g[:, 1:] = _clip(ls, eps)
    g[:, 0] = 1.0
    return g


def update_g_rx(Y, state: BcdState, eps: float = DEFAULT_EPSILON, W=None, deterministic: bool = True) -> np.ndarray:
    """Receive magnitude responses: LS over all positions, projected onto [eps, 1]."""
    W = _project(Y, state, deterministic) if W is None else W
    num, den = kernels.get("magnitude_rx_terms", deterministic)(
        *kernels.contiguous(W, state.a_tx, state.a_rx, state.c, state.g_tx, _hnorm2(state))
    )
    ls = _guarded_ratio(num, den, state.g_rx, state.flags, "g_rx")
    return _clip(ls, eps)


def _gain_terms(Y, state, deterministic=True):
    Q = np.ascontiguousarray(state.response())
    V = kernels.get("gain_numerator", deterministic)(*kernels.contiguous(Y, Q))
    q2 = np.sum(Q.real**2 + Q.imag**2, axis=(1, 2, 3))
    return V, q2


def update_h(Y, state: BcdState, deterministic: bool = True, _terms=None) -> np.ndarray:
    """Pulse gains per position: LS projection of the data on the modeled response."""
    V, q2 = _gain_terms(Y, state, deterministic) if _terms is None else _terms
    return _guarded_ratio(V, q2[:, None], state.h, state.flags, "h")


def rescale(state: BcdState) -> BcdState:
    """Restore the scaling constraints without changing the modeled tensors.

    Magnitude columns are divided by their maxima (reference transmitter
    excluded) and the steering entries absorb the inverse; the steering
    vectors then get a real first entry and norms N and M, the phase
    response a unit first entry, and the pulse gains take up the product of
    the inverse factors.
    """
    s = state.copy()
    P, N = s.a_tx.shape
    M = s.a_rx.shape[1]

    col_tx = np.ones(N)
    if N > 1:
        col_tx[1:] = s.g_tx[:, 1:].max(axis=0)
    col_rx = s.g_rx.max(axis=0)
    s.g_tx = s.g_tx / col_tx
    s.g_tx[:, 0] = 1.0
    s.g_rx = s.g_rx / col_rx
    a_tx = s.a_tx * col_tx
    a_rx = s.a_rx * col_rx

    for p in range(P):
        try:
            k_tx = canonical_phase_scale(a_tx[p], N)
            k_rx = canonical_phase_scale(a_rx[p], M)
        except ZeroDivisionError:
            s.flags["rescale_zero_norm"] += 1
            k_tx = k_rx = 1.0
        c0 = s.c[p, 0]
        k_c = np.conj(c0) / abs(c0) if c0 != 0 else 1.0
        a_tx[p] *= k_tx
        a_rx[p] *= k_rx
        s.c[p] *= k_c
        s.h[p] /= k_tx * k_rx * k_c
    # Pin exact constraint values lost to rounding.
    a_tx[:, 0] = np.abs(a_tx[:, 0])
    a_rx[:, 0] = np.abs(a_rx[:, 0])
    nz = np.abs(s.c[:, 0]) > 0
    s.c[nz, 0] = 1.0
    s.a_tx, s.a_rx = a_tx, a_rx
    return s


def normalized_cost(data, state: BcdState, deterministic: bool = True) -> float:
    """``sum_p ||Y_p - Yhat_p||^2 / sum_p ||Y_p||^2`` evaluated directly."""
    Y = data.tensors if isinstance(data, CalibrationSet) else np.asarray(data, dtype=np.complex128)
    if Y.ndim == 4:
        Y = Y[None]
    ynorm2 = float(np.sum(Y.real**2 + Y.imag**2))
    if ynorm2 == 0:
        raise ValueError("normalized cost is undefined for all-zero data")
    Q = np.ascontiguousarray(state.response())
    err = kernels.get("residual_energy", deterministic)(*kernels.contiguous(Y, Q, state.h))
    return float(err) / ynorm2


def _expanded_cost(ynorm2, state, cross):
    """Normalized cost from ``<Y, Yhat>`` without forming the residual."""
    Q = state.response()
    q2 = np.sum(Q.real**2 + Q.imag**2, axis=(1, 2, 3))
    model2 = float(np.sum(q2 * _hnorm2(state)))
    return max(ynorm2 - 2.0 * cross + model2, 0.0) / ynorm2


def _cross_from_W(W, state):
    return float(np.vdot(state.response(), W).real)


def calibrate(data: CalibrationSet, cfg: Optional[BcdConfig] = None) -> CalibrationEstimate:
    """Run the block coordinate descent until the cost decrease drops to ``cfg.tol``."""
    cfg = cfg or BcdConfig()
    if not isinstance(data, CalibrationSet):
        data = CalibrationSet(data)
    Y_all = data.tensors
    energy = np.sum(Y_all.real**2 + Y_all.imag**2, axis=(1, 2, 3, 4))
    used = [int(p) for p in np.flatnonzero(energy > 0)]
    excluded = [int(p) for p in np.flatnonzero(energy == 0)]
    if excluded:
        warnings.warn(f"excluding all-zero calibration tensors at positions {excluded}", RuntimeWarning)
    if not used:
        raise ValueError("calibration set contains no signal")
    Y = Y_all if not excluded else np.ascontiguousarray(Y_all[used])
    ynorm2 = float(energy[used].sum())
    det = cfg.deterministic

    state = initialize(Y)
    state.flags["excluded"] = len(excluded)
    W = _project(Y, state, det)
    trace = [_expanded_cost(ynorm2, state, _cross_from_W(W, state))]
    block_costs = []
    converged = False

    for it in range(1, cfg.max_iter + 1):
        costs = []
        state.a_tx = update_a_tx(Y, state, W, det)
        costs.append(_expanded_cost(ynorm2, state, _cross_from_W(W, state)))
        state.a_rx = update_a_rx(Y, state, W, det)
        costs.append(_expanded_cost(ynorm2, state, _cross_from_W(W, state)))
        state.c = update_c(Y, state, W, det)
        costs.append(_expanded_cost(ynorm2, state, _cross_from_W(W, state)))
        state.g_tx = update_g_tx(Y, state, cfg.epsilon, W, det)
        costs.append(_expanded_cost(ynorm2, state, _cross_from_W(W, state)))
        state.g_rx = update_g_rx(Y, state, cfg.epsilon, W, det)
        costs.append(_expanded_cost(ynorm2, state, _cross_from_W(W, state)))
        V, q2 = _gain_terms(Y, state, det)
        state.h = update_h(Y, state, det, _terms=(V, q2))
        costs.append(_expanded_cost(ynorm2, state, float(np.vdot(state.h, V).real)))
        state = rescale(state)
        W = _project(Y, state, det)
        f = _expanded_cost(ynorm2, state, _cross_from_W(W, state))
        costs.append(f)
        block_costs.append(costs)
        trace.append(f)
        if trace[-2] - trace[-1] <= cfg.tol:
            converged = True
            break

    final = normalized_cost(Y, state, det)
    log.debug("BCD stopped after %d iterations, f_rel=%.3e", len(trace) - 1, final)
    positions = None
    if data.positions is not None:
        positions = [data.positions[p] for p in used]
    return CalibrationEstimate(
        state=state,
        trace=np.asarray(trace),
        block_costs=np.asarray(block_costs).reshape(-1, len(BLOCKS)),
        used=used,
        excluded=excluded,
        converged=converged,
        final_cost=final,
        positions=positions,
    )
