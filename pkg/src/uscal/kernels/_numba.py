"""numba kernels mirroring :mod:`uscal.kernels._numpy` loop for loop.

Every kernel parallelizes only over an index that owns its own output
slice, and reductions inside a slice run in a fixed serial order, so the
parallel and serial builds give bit-identical results.
"""
import numpy as np
from numba import njit, prange

_OPTS = dict(cache=True, nogil=True, fastmath=False)


def _project_gain(Y, h):
    P, N, M, L, T = Y.shape
    out = np.empty((P, N, M, L), dtype=np.complex128)
    for p in prange(P):
        for n in range(N):
            for m in range(M):
                for l in range(L):
                    acc = 0j
                    for t in range(T):
                        acc += Y[p, n, m, l, t] * np.conj(h[p, t])
                    out[p, n, m, l] = acc
    return out


def _gain_numerator(Y, Q):
    P, N, M, L, T = Y.shape
    out = np.zeros((P, T), dtype=np.complex128)
    for p in prange(P):
        for n in range(N):
            for m in range(M):
                for l in range(L):
                    q = np.conj(Q[p, n, m, l])
                    for t in range(T):
                        out[p, t] += q * Y[p, n, m, l, t]
    return out


def _residual_energy(Y, Q, h):
    P, N, M, L, T = Y.shape
    per_p = np.zeros(P)
    for p in prange(P):
        acc = 0.0
        for n in range(N):
            for m in range(M):
                for l in range(L):
                    q = Q[p, n, m, l]
                    for t in range(T):
                        r = Y[p, n, m, l, t] - q * h[p, t]
                        acc += r.real * r.real + r.imag * r.imag
        per_p[p] = acc
    total = 0.0
    for p in range(P):
        total += per_p[p]
    return total


def _steering_tx_terms(W, a_rx, c, g_tx, g_rx):
    P, N, M, L = W.shape
    num = np.zeros((P, N), dtype=np.complex128)
    den = np.zeros((P, N))
    for p in prange(P):
        for n in range(N):
            for m in range(M):
                wb = 0j
                bn2 = 0.0
                for l in range(L):
                    b = c[p, l] * g_tx[l, n] * g_rx[l, m]
                    wb += W[p, n, m, l] * np.conj(b)
                    bn2 += b.real * b.real + b.imag * b.imag
                ar = a_rx[p, m]
                num[p, n] += wb * np.conj(ar)
                den[p, n] += bn2 * (ar.real * ar.real + ar.imag * ar.imag)
    return num, den


def _steering_rx_terms(W, a_tx, c, g_tx, g_rx):
    P, N, M, L = W.shape
    num = np.zeros((P, M), dtype=np.complex128)
    den = np.zeros((P, M))
    for p in prange(P):
        for n in range(N):
            at = a_tx[p, n]
            at2 = at.real * at.real + at.imag * at.imag
            for m in range(M):
                wb = 0j
                bn2 = 0.0
                for l in range(L):
                    b = c[p, l] * g_tx[l, n] * g_rx[l, m]
                    wb += W[p, n, m, l] * np.conj(b)
                    bn2 += b.real * b.real + b.imag * b.imag
                num[p, m] += wb * np.conj(at)
                den[p, m] += bn2 * at2
    return num, den


def _phase_terms(W, a_tx, a_rx, g_tx, g_rx):
    P, N, M, L = W.shape
    out = np.zeros((P, L), dtype=np.complex128)
    for p in prange(P):
        for n in range(N):
            for m in range(M):
                s = np.conj(a_tx[p, n]) * np.conj(a_rx[p, m])
                for l in range(L):
                    out[p, l] += s * (g_tx[l, n] * g_rx[l, m]) * W[p, n, m, l]
    return out


def _magnitude_tx_terms(W, a_tx, a_rx, c, g_rx, hn2):
    P, N, M, L = W.shape
    num = np.zeros((L, N))
    den = np.zeros((L, N))
    for l in prange(L):
        for p in range(P):
            cc = np.conj(c[p, l])
            c2 = c[p, l].real ** 2 + c[p, l].imag ** 2
            for n in range(N):
                at = a_tx[p, n]
                at2 = at.real * at.real + at.imag * at.imag
                for m in range(M):
                    ar = a_rx[p, m]
                    z = np.conj(at) * np.conj(ar) * cc * W[p, n, m, l]
                    num[l, n] += g_rx[l, m] * z.real
                    den[l, n] += at2 * (ar.real * ar.real + ar.imag * ar.imag) * g_rx[l, m] ** 2 * hn2[p] * c2
    return num, den


def _magnitude_rx_terms(W, a_tx, a_rx, c, g_tx, hn2):
    P, N, M, L = W.shape
    num = np.zeros((L, M))
    den = np.zeros((L, M))
    for l in prange(L):
        for p in range(P):
            cc = np.conj(c[p, l])
            c2 = c[p, l].real ** 2 + c[p, l].imag ** 2
            for n in range(N):
                at = a_tx[p, n]
                at2 = at.real * at.real + at.imag * at.imag
                for m in range(M):
                    ar = a_rx[p, m]
                    z = np.conj(at) * np.conj(ar) * cc * W[p, n, m, l]
                    num[l, m] += g_tx[l, n] * z.real
                    den[l, m] += at2 * (ar.real * ar.real + ar.imag * ar.imag) * g_tx[l, n] ** 2 * hn2[p] * c2
    return num, den


_PY = {
    "project_gain": _project_gain,
    "gain_numerator": _gain_numerator,
    "residual_energy": _residual_energy,
    "steering_tx_terms": _steering_tx_terms,
    "steering_rx_terms": _steering_rx_terms,
    "phase_terms": _phase_terms,
    "magnitude_tx_terms": _magnitude_tx_terms,
    "magnitude_rx_terms": _magnitude_rx_terms,
}

serial = {name: njit(**_OPTS)(fn) for name, fn in _PY.items()}
parallel = {name: njit(parallel=True, **_OPTS)(fn) for name, fn in _PY.items()}
