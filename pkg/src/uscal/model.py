"""Forward model of the coupled array tensor and the two baseline models.

The measurement for a single point target at calibration position ``p`` is

    Y[n, m, l, t] = a_tx[n] * a_rx[m] * g_tx[l, n] * g_rx[l, m] * c[l] * h[t]

with shared magnitude responses ``g_tx`` (L x N) and ``g_rx`` (L x M) and
per-position steering vectors, unit-modulus phase response ``c`` and pulse
gains ``h``.  Stacked variants take a leading position axis ``P``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import as_tensor4

__all__ = [
    "DEFAULT_EPSILON",
    "SharedParams",
    "PositionParams",
    "ArrayGeometry",
    "TargetPosition",
    "response_tensor",
    "synthesize",
    "synthesize_stack",
    "frequency_matrix",
    "factor_matrices",
    "analytic_response",
    "broadside_compensate",
    "broadside_gains",
    "Rank1Result",
    "rank1_cpd",
    "canonical_phase_scale",
]

DEFAULT_EPSILON = 1e-3


@dataclass
class SharedParams:
    """Magnitude responses shared by every calibration position."""

    g_tx: np.ndarray
    g_rx: np.ndarray

    def __post_init__(self):
        self.g_tx = np.asarray(self.g_tx, dtype=np.float64)
        self.g_rx = np.asarray(self.g_rx, dtype=np.float64)
        if self.g_tx.ndim != 2 or self.g_rx.ndim != 2:
            raise ValueError("g_tx and g_rx must be matrices")
        if self.g_tx.shape[0] != self.g_rx.shape[0]:
            raise ValueError(f"L mismatch: {self.g_tx.shape[0]} != {self.g_rx.shape[0]}")

    @property
    def L(self) -> int:
        return self.g_tx.shape[0]

    @property
    def N(self) -> int:
        return self.g_tx.shape[1]

    @property
    def M(self) -> int:
        return self.g_rx.shape[1]

    def constraint_violations(self, eps: float = DEFAULT_EPSILON, atol: float = 1e-12) -> list[str]:
        """List the violated scaling constraints (empty when canonical)."""
        out = []
        for name, g in (("g_tx", self.g_tx), ("g_rx", self.g_rx)):
            if np.any(g < eps - atol) or np.any(g > 1 + atol):
                out.append(f"{name} outside [{eps}, 1]")
        if not np.allclose(self.g_tx[:, 0], 1.0, rtol=0, atol=atol):
            out.append("g_tx reference column is not all-ones")
        if self.N > 1 and np.any(np.abs(self.g_tx[:, 1:].max(axis=0) - 1) > atol):
            out.append("g_tx column maximum differs from 1")
        if np.any(np.abs(self.g_rx.max(axis=0) - 1) > atol):
            out.append("g_rx column maximum differs from 1")
        return out


@dataclass
class PositionParams:
    """Per-position factors: steering vectors, phase response, pulse gains."""

    a_tx: np.ndarray
    a_rx: np.ndarray
    c: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        for name in ("a_tx", "a_rx", "c", "h"):
            v = np.asarray(getattr(self, name), dtype=np.complex128)
            if v.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            setattr(self, name, v)

    def constraint_violations(self, atol: float = 1e-10) -> list[str]:
        out = []
        N, M = self.a_tx.size, self.a_rx.size
        if abs(self.a_tx[0].imag) > atol or self.a_tx[0].real < -atol:
            out.append("a_tx[0] is not real nonnegative")
        if abs(np.vdot(self.a_tx, self.a_tx).real - N) > atol * N:
            out.append("||a_tx||^2 != N")
        if abs(self.a_rx[0].imag) > atol or self.a_rx[0].real < -atol:
            out.append("a_rx[0] is not real nonnegative")
        if abs(np.vdot(self.a_rx, self.a_rx).real - M) > atol * M:
            out.append("||a_rx||^2 != M")
        if np.any(np.abs(np.abs(self.c) - 1) > atol):
            out.append("c is not unit modulus")
        if abs(self.c[0] - 1) > atol:
            out.append("c[0] != 1")
        return out


@dataclass
class ArrayGeometry:
    """Element coordinates (meters) and the acquisition constants."""

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    f0: float = 40e3
    fs: float = 195e3
    c_sound: float = 343.0
    L_dft: int = 4096

    def __post_init__(self):
        self.tx_positions = np.atleast_2d(np.asarray(self.tx_positions, dtype=np.float64))
        self.rx_positions = np.atleast_2d(np.asarray(self.rx_positions, dtype=np.float64))
        if self.tx_positions.shape[1] != 3 or self.rx_positions.shape[1] != 3:
            raise ValueError("element positions must be (K, 3) arrays")
        if min(self.f0, self.fs, self.c_sound, self.L_dft) <= 0:
            raise ValueError("frequencies, speed of sound and DFT length must be positive")

    @property
    def delta_omega(self) -> float:
        """Radial frequency spacing of adjacent DFT bins."""
        return 2 * np.pi * self.fs / self.L_dft

    def wavevector(self, azimuth: float, elevation: float) -> np.ndarray:
        """Wave vector; azimuth tilts z toward x, elevation tilts z toward y."""
        k0 = -2 * np.pi * self.f0 / self.c_sound
        return k0 * np.array(
            [
                np.sin(azimuth) * np.cos(elevation),
                np.sin(elevation),
                np.cos(azimuth) * np.cos(elevation),
            ]
        )


@dataclass(frozen=True)
class TargetPosition:
    index: int
    range: float
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("target range must be positive")


def response_tensor(g_tx, g_rx, a_tx, a_rx, c) -> np.ndarray:
    """Array response ``Q`` of shape (..., N, M, L); leading axes broadcast."""
    g_tx = np.asarray(g_tx)
    g_rx = np.asarray(g_rx)
    a_tx = np.asarray(a_tx)
    a_rx = np.asarray(a_rx)
    c = np.asarray(c)
    mag = g_tx.T[:, None, :] * g_rx.T[None, :, :]  # (N, M, L)
    return a_tx[..., :, None, None] * a_rx[..., None, :, None] * c[..., None, None, :] * mag


def synthesize(shared: SharedParams, pos: PositionParams) -> np.ndarray:
    """Noise-free measurement tensor of one position, shape (N, M, L, T)."""
    N, M, L = shared.N, shared.M, shared.L
    if pos.a_tx.size != N or pos.a_rx.size != M or pos.c.size != L:
        raise ValueError(
            f"dimension mismatch: shared (N={N}, M={M}, L={L}) vs position "
            f"(N={pos.a_tx.size}, M={pos.a_rx.size}, L={pos.c.size})"
        )
    q = response_tensor(shared.g_tx, shared.g_rx, pos.a_tx, pos.a_rx, pos.c)
    return np.ascontiguousarray(q[..., None] * pos.h)


def synthesize_stack(g_tx, g_rx, a_tx, a_rx, c, h) -> np.ndarray:
    """Stacked synthesis: returns (P, N, M, L, T)."""
    q = response_tensor(g_tx, g_rx, a_tx, a_rx, c)
    return np.ascontiguousarray(q[..., None] * np.asarray(h)[:, None, None, None, :])


def frequency_matrix(shared: SharedParams, c) -> np.ndarray:
    """Frequency matrix of shape (L, N*M); column ``n*M + m`` is ``c * g_tx[:, n] * g_rx[:, m]``."""
    c = np.asarray(c, dtype=np.complex128)
    if c.shape != (shared.L,):
        raise ValueError(f"phase response must have length L={shared.L}")
    cols = shared.g_tx[:, :, None] * shared.g_rx[:, None, :]  # (L, N, M)
    return c[:, None] * cols.reshape(shared.L, -1)


def factor_matrices(pos: PositionParams):
    """Masked factor matrices ``(A_tx, A_rx, H)`` used by the unfolding identities."""
    N, M = pos.a_tx.size, pos.a_rx.size
    A_tx = np.kron(np.diag(pos.a_tx), np.ones((1, M)))
    A_rx = np.kron(np.ones((1, N)), np.diag(pos.a_rx))
    H = np.outer(pos.h, np.ones(N * M))
    return A_tx, A_rx, H


def analytic_response(geom: ArrayGeometry, target: TargetPosition, L: int):
    """Far-field point-source response ``(a_tx, a_rx, b)`` from the geometry."""
    k = geom.wavevector(target.azimuth, target.elevation)
    a_tx = np.exp(-1j * (geom.tx_positions @ k))
    a_rx = np.exp(-1j * (geom.rx_positions @ k))
    ell = np.arange(L)
    b = np.exp(-1j * 2 * ell * target.range * geom.delta_omega / geom.c_sound)
    return a_tx, a_rx, b


def broadside_compensate(analytic, cpd_gains):
    """Elementwise correction of analytic factors by broadside CPD gains."""
    if len(analytic) != 3 or len(cpd_gains) != 3:
        raise ValueError("expected (a_tx, a_rx, b) triples")
    out = []
    for x, g in zip(analytic, cpd_gains):
        x = np.asarray(x)
        g = np.asarray(g)
        if x.shape != g.shape:
            raise ValueError(f"length mismatch: {x.shape} vs {g.shape}")
        out.append(x * g)
    return tuple(out)


def broadside_gains(cpd: "Rank1Result", b_analytic_broadside) -> tuple:
    """Compensation gains from a rank-1 CPD of a broadside measurement.

    The frequency gain has the broadside linear range phase removed, so that
    compensating the broadside analytic response reproduces the CPD fit
    instead of applying the range phase twice.
    """
    b_an = np.asarray(b_analytic_broadside)
    if b_an.shape != cpd.c.shape:
        raise ValueError(f"length mismatch: {b_an.shape} vs {cpd.c.shape}")
    return cpd.a.copy(), cpd.b.copy(), cpd.c * np.conj(b_an) / np.abs(b_an)


def canonical_phase_scale(v: np.ndarray, target_norm2: float) -> complex:
    """Scale factor making ``v[0]`` real nonnegative and ``||v||^2 == target_norm2``."""
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ZeroDivisionError("cannot normalize a zero vector")
    phase = np.exp(-1j * np.angle(v[0])) if v[0] != 0 else 1.0
    return np.sqrt(target_norm2) / nrm * phase


@dataclass
class Rank1Result:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    residuals: list = field(default_factory=list)
    degenerate: bool = False

    @property
    def relative_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    def tensor(self) -> np.ndarray:
        return (
            self.a[:, None, None, None]
            * self.b[None, :, None, None]
            * self.c[None, None, :, None]
            * self.d[None, None, None, :]
        )


def _t_average(y: np.ndarray) -> np.ndarray:
    """Complex-valued snapshot average of absolute real and imaginary parts."""
    axes = tuple(range(y.ndim - 1))
    return np.mean(np.abs(y.real), axis=axes) + 1j * np.mean(np.abs(y.imag), axis=axes)


def rank1_cpd(y, tol: float = 1e-10, max_iter: int = 500) -> Rank1Result:
    """Positionwise rank-1 CPD of an (N, M, L, T) tensor by ALS.

    Initialization matches the BCD solver (all-ones factors, averaged gains).
    ``residuals`` holds ``||Y - Yhat||^2 / ||Y||^2`` after every sweep.  The
    returned factors are canonicalized: ``a[0]``, ``b[0]`` real with norms
    ``N`` and ``M``; ``c[0]`` real with ``max |c| == 1``; ``d`` absorbs the rest.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    y = as_tensor4(y)
    N, M, L, T = y.shape
    ynorm2 = float(np.vdot(y, y).real)
    if ynorm2 == 0:
        z = [np.zeros(k, dtype=np.complex128) for k in (N, M, L, T)]
        return Rank1Result(*z, residuals=[], degenerate=True)

    a = np.ones(N, dtype=np.complex128)
    b = np.ones(M, dtype=np.complex128)
    c = np.ones(L, dtype=np.complex128)
    d = _t_average(y).astype(np.complex128)
    if not np.any(d):
        d = np.ones(T, dtype=np.complex128)

    def nrm2(v):
        return float(np.vdot(v, v).real)

    residuals = []
    for _ in range(max_iter):
        a = np.einsum("nmlt,m,l,t->n", y, b.conj(), c.conj(), d.conj()) / (nrm2(b) * nrm2(c) * nrm2(d))
        b = np.einsum("nmlt,n,l,t->m", y, a.conj(), c.conj(), d.conj()) / (nrm2(a) * nrm2(c) * nrm2(d))
        c = np.einsum("nmlt,n,m,t->l", y, a.conj(), b.conj(), d.conj()) / (nrm2(a) * nrm2(b) * nrm2(d))
        d = np.einsum("nmlt,n,m,l->t", y, a.conj(), b.conj(), c.conj()) / (nrm2(a) * nrm2(b) * nrm2(c))
        r = y - Rank1Result(a, b, c, d).tensor()
        residuals.append(float(np.vdot(r, r).real) / ynorm2)
        if len(residuals) > 1 and abs(residuals[-2] - residuals[-1]) < tol:
            break

    ka = canonical_phase_scale(a, N)
    kb = canonical_phase_scale(b, M)
    kc = (np.exp(-1j * np.angle(c[0])) if c[0] != 0 else 1.0) / np.max(np.abs(c))
    a, b, c = a * ka, b * kb, c * kc
    d = d / (ka * kb * kc)
    return Rank1Result(a, b, c, d, residuals=residuals, degenerate=False)
