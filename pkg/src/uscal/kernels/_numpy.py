"""Reference numpy implementations of the hot contractions.

Shapes: ``Y`` (P, N, M, L, T); ``W`` and ``Q`` (P, N, M, L); ``a_tx`` (P, N);
``a_rx`` (P, M); ``c`` (P, L); ``h`` (P, T); ``g_tx`` (L, N); ``g_rx`` (L, M).
"""
import numpy as np


def project_gain(Y, h):
    P, N, M, L, T = Y.shape
    out = Y.reshape(P, N * M * L, T) @ np.conj(h)[:, :, None]
    return out.reshape(P, N, M, L)


def gain_numerator(Y, Q):
    P, N, M, L, T = Y.shape
    out = np.conj(Q).reshape(P, 1, N * M * L) @ Y.reshape(P, N * M * L, T)
    return out.reshape(P, T)


def residual_energy(Y, Q, h):
    total = 0.0
    for p in range(Y.shape[0]):
        r = Y[p] - Q[p][..., None] * h[p]
        total += float(np.sum(r.real**2 + r.imag**2))
    return total


def _freq(c, g_tx, g_rx):
    return c[:, None, None, :] * (g_tx.T[None, :, None, :] * g_rx.T[None, None, :, :])


def steering_tx_terms(W, a_rx, c, g_tx, g_rx):
    B = _freq(c, g_tx, g_rx)
    wb = np.sum(W * np.conj(B), axis=3)
    bn2 = np.sum(B.real**2 + B.imag**2, axis=3)
    num = np.einsum("pnm,pm->pn", wb, np.conj(a_rx))
    den = np.einsum("pnm,pm->pn", bn2, np.abs(a_rx) ** 2)
    return num, den


def steering_rx_terms(W, a_tx, c, g_tx, g_rx):
    B = _freq(c, g_tx, g_rx)
    wb = np.sum(W * np.conj(B), axis=3)
    bn2 = np.sum(B.real**2 + B.imag**2, axis=3)
    num = np.einsum("pnm,pn->pm", wb, np.conj(a_tx))
    den = np.einsum("pnm,pn->pm", bn2, np.abs(a_tx) ** 2)
    return num, den


def phase_terms(W, a_tx, a_rx, g_tx, g_rx):
    steer = np.conj(a_tx)[:, :, None] * np.conj(a_rx)[:, None, :]
    mag = g_tx.T[:, None, :] * g_rx.T[None, :, :]
    return np.einsum("pnml,pnm,nml->pl", W, steer, mag)


def magnitude_tx_terms(W, a_tx, a_rx, c, g_rx, hn2):
    steer = np.conj(a_tx)[:, :, None] * np.conj(a_rx)[:, None, :]
    wc = W * np.conj(c)[:, None, None, :]
    num = np.einsum("pnml,pnm,lm->ln", wc, steer, g_rx).real
    pw = (np.abs(a_tx) ** 2)[:, :, None] * (np.abs(a_rx) ** 2)[:, None, :] * hn2[:, None, None]
    cw = np.abs(c) ** 2
    den = np.einsum("pnm,pl,lm->ln", pw, cw, g_rx**2)
    return num, den


def magnitude_rx_terms(W, a_tx, a_rx, c, g_tx, hn2):
    steer = np.conj(a_tx)[:, :, None] * np.conj(a_rx)[:, None, :]
    wc = W * np.conj(c)[:, None, None, :]
    num = np.einsum("pnml,pnm,ln->lm", wc, steer, g_tx).real
    pw = (np.abs(a_tx) ** 2)[:, :, None] * (np.abs(a_rx) ** 2)[:, None, :] * hn2[:, None, None]
    cw = np.abs(c) ** 2
    den = np.einsum("pnm,pl,ln->lm", pw, cw, g_tx**2)
    return num, den
