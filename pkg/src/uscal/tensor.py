"""Dense four-way complex arrays and the multilinear helpers built on them.

A measurement tensor is a C-ordered ``complex128`` ndarray of shape
``(N, M, L, T)`` (transmitter, receiver, frequency bin, snapshot), so the
snapshot index varies fastest in memory.

The four unfoldings use the cyclic column ordering of the coupled model:

====  =========  ==============================================
mode  rows       column index (fastest first)
====  =========  ==============================================
1     N          m, l, t   -> col = (t*L + l)*M + m
2     M          l, t, n   -> col = (n*T + t)*L + l
3     L          t, n, m   -> col = (m*N + n)*T + t
4     T          n, m, l   -> col = (l*M + m)*N + n
====  =========  ==============================================
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "as_tensor4",
    "unfold",
    "fold",
    "khatri_rao",
    "hadamard",
    "kron",
    "outer",
    "frobenius_norm",
    "inner_product",
    "vectorize_response",
]

# Axis order (row axis first, then column axes slowest -> fastest) per mode.
_MODE_AXES = {
    1: (0, 3, 2, 1),
    2: (1, 0, 3, 2),
    3: (2, 1, 0, 3),
    4: (3, 2, 1, 0),
}


def as_tensor4(x, copy: bool = False) -> np.ndarray:
    """Validate and return ``x`` as a C-contiguous complex128 4-way array."""
    arr = np.array(x, dtype=np.complex128) if copy else np.asarray(x, dtype=np.complex128)
    if arr.ndim != 4:
        raise ValueError(f"expected a 4-way array, got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise ValueError(f"all dimensions must be positive, got {arr.shape}")
    return np.ascontiguousarray(arr)


def _check_mode(mode: int) -> tuple:
    try:
        return _MODE_AXES[int(mode)]
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"mode must be one of 1, 2, 3, 4; got {mode!r}") from None


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Matricize a 4-way array along ``mode`` (1-based).

    Returns a new C-contiguous matrix of shape ``(I_mode, prod(other dims))``.
    """
    axes = _check_mode(mode)
    x = as_tensor4(x)
    rows = x.shape[axes[0]]
    return np.ascontiguousarray(x.transpose(axes)).reshape(rows, -1)


def fold(m: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    axes = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or min(dims) < 1:
        raise ValueError(f"dims must be four positive integers, got {dims}")
    m = np.asarray(m, dtype=np.complex128)
    permuted = tuple(dims[a] for a in axes)
    expected = (permuted[0], permuted[1] * permuted[2] * permuted[3])
    if m.shape != expected:
        raise ValueError(
            f"matrix shape {m.shape} does not match mode-{mode} unfolding {expected} of {dims}"
        )
    inverse = np.argsort(axes)
    return np.ascontiguousarray(m.reshape(permuted).transpose(inverse))


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; column j is ``kron(a[:, j], b[:, j])``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column counts differ: {a.shape[1]} != {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def hadamard(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x * y


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b)


def outer(a, b, c, d) -> np.ndarray:
    """Four-way outer product ``a ∘ b ∘ c ∘ d``."""
    vecs = [np.asarray(v, dtype=np.complex128) for v in (a, b, c, d)]
    if any(v.ndim != 1 for v in vecs):
        raise ValueError("outer expects four vectors")
    a, b, c, d = vecs
    return (
        a[:, None, None, None] * b[None, :, None, None] * c[None, None, :, None] * d[None, None, None, :]
    )


def frobenius_norm(x) -> float:
    x = np.asarray(x)
    return float(np.sqrt(np.sum(x.real**2 + x.imag**2)))


def inner_product(x, y) -> complex:
    """``<x, y> = sum(conj(x) * y)``."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return complex(np.vdot(x, y))


def vectorize_response(q: np.ndarray) -> np.ndarray:
    """Vectorize an ``(..., N, M, L)`` response with n fastest, then m, then l.

    This is the column order of the mode-4 unfolding, so a single-target
    measurement satisfies ``unfold(Y, 4) == outer(h, vectorize_response(Q))``.
    """
    q = np.asarray(q)
    if q.ndim < 3:
        raise ValueError("expected at least three trailing axes (N, M, L)")
    lead = q.shape[:-3]
    return np.ascontiguousarray(np.swapaxes(q, -1, -3)).reshape(*lead, -1)
