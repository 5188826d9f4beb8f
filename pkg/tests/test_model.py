import itertools

import numpy as np
import pytest

from uscal.benchmark import SimConfig, make_rng, truth_state
from uscal.model import (
    ArrayGeometry,
    PositionParams,
    SharedParams,
    TargetPosition,
    analytic_response,
    broadside_compensate,
    broadside_gains,
    canonical_phase_scale,
    factor_matrices,
    frequency_matrix,
    rank1_cpd,
    response_tensor,
    synthesize,
    synthesize_stack,
)
from uscal.tensor import khatri_rao, outer, unfold

from conftest import crandn


def random_params(rng, N, M, L, T, delta=0.5):
    shared = SharedParams(rng.uniform(1 - delta, 1, (L, N)), rng.uniform(1 - delta, 1, (L, M)))
    pos = PositionParams(crandn(rng, N), crandn(rng, M), np.exp(1j * rng.uniform(-np.pi, np.pi, L)), crandn(rng, T))
    return shared, pos


def test_all_ones_synthesis():
    shared = SharedParams(np.ones((3, 2)), np.ones((3, 4)))
    pos = PositionParams(np.ones(2), np.ones(4), np.ones(3), np.ones(5))
    np.testing.assert_array_equal(synthesize(shared, pos), np.ones((2, 4, 3, 5)))


def test_synthesis_entries(rng):
    shared, pos = random_params(rng, 2, 2, 2, 2)
    y = synthesize(shared, pos)
    for n, m, l, t in itertools.product(range(2), repeat=4):
        ref = pos.a_tx[n] * pos.a_rx[m] * shared.g_tx[l, n] * shared.g_rx[l, m] * pos.c[l] * pos.h[t]
        assert np.isclose(y[n, m, l, t], ref, rtol=1e-14)


def test_slices_are_rank_one(rng):
    shared, pos = random_params(rng, 3, 4, 5, 6)
    y = synthesize(shared, pos)
    for n, m in itertools.product(range(3), range(4)):
        b = shared.g_tx[:, n] * shared.g_rx[:, m] * pos.c
        np.testing.assert_allclose(y[n, m], pos.a_tx[n] * pos.a_rx[m] * np.outer(b, pos.h), rtol=1e-13)
        assert np.linalg.matrix_rank(y[n, m]) == 1


def test_synthesis_dimension_mismatch(rng):
    shared, pos = random_params(rng, 2, 3, 4, 2)
    with pytest.raises(ValueError):
        synthesize(shared, PositionParams(pos.a_tx, pos.a_rx[:2], pos.c, pos.h))
    with pytest.raises(ValueError):
        SharedParams(np.ones((3, 2)), np.ones((4, 2)))


def test_stack_matches_single(rng):
    shared, pos = random_params(rng, 2, 3, 4, 2)
    Y = synthesize_stack(shared.g_tx, shared.g_rx, pos.a_tx[None], pos.a_rx[None], pos.c[None], pos.h[None])
    np.testing.assert_array_equal(Y[0], synthesize(shared, pos))


def test_frequency_matrix(rng):
    shared = SharedParams(np.ones((3, 2)), np.ones((3, 2)))
    np.testing.assert_array_equal(frequency_matrix(shared, np.ones(3)), np.ones((3, 4)))
    shared, pos = random_params(rng, 2, 3, 4, 1)
    B = frequency_matrix(shared, pos.c)
    y = synthesize(shared, pos)
    for n, m in itertools.product(range(2), range(3)):
        np.testing.assert_allclose(B[:, n * 3 + m], shared.g_tx[:, n] * shared.g_rx[:, m] * pos.c, rtol=1e-15)
        # column (n, m) is the frequency response of the transceiver pair
        np.testing.assert_allclose(pos.a_tx[n] * pos.a_rx[m] * B[:, n * 3 + m] * pos.h[0], y[n, m, :, 0], rtol=1e-13)
    with pytest.raises(ValueError):
        frequency_matrix(shared, np.ones(3))


def test_unfolding_identities_with_factor_matrices(rng):
    for _ in range(20):
        N, M, L, T = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 9), rng.integers(1, 4)
        shared, pos = random_params(rng, N, M, L, T)
        y = synthesize(shared, pos)
        A_tx, A_rx, H = factor_matrices(pos)
        B = frequency_matrix(shared, pos.c)
        kr = khatri_rao
        pairs = [
            (unfold(y, 1), A_tx @ kr(kr(H, B), A_rx).T),
            (unfold(y, 2), A_rx @ kr(kr(A_tx, H), B).T),
            (unfold(y, 3), B @ kr(kr(A_rx, A_tx), H).T),
            (unfold(y, 4), H @ kr(kr(B, A_rx), A_tx).T),
        ]
        for lhs, rhs in pairs:
            assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)


def test_equal_gains_reduce_to_outer_product(rng):
    g = rng.uniform(0.5, 1, 6)
    shared = SharedParams(np.ones((6, 2)), np.tile(g[:, None], (1, 3)))
    _, pos = random_params(rng, 2, 3, 6, 4)
    y = synthesize(shared, pos)
    np.testing.assert_allclose(y, outer(pos.a_tx, pos.a_rx, g * pos.c, pos.h), rtol=1e-12)


def test_constraint_reporting(small_truth):
    st = small_truth
    assert st.shared.constraint_violations() == []
    for p in range(st.a_tx.shape[0]):
        assert st.position(p).constraint_violations() == []
    bad = SharedParams(st.g_tx * 0.5, st.g_rx)
    assert bad.constraint_violations()
    pos = st.position(0)
    assert PositionParams(pos.a_tx * 2, pos.a_rx, pos.c, pos.h).constraint_violations()


def test_target_position_validation():
    with pytest.raises(ValueError):
        TargetPosition(0, 0.0, 0.0, 0.0)


def geometry():
    tx = np.array([[0.0, 0, 0], [0.01, 0, 0]])
    rx = np.array([[0.0, 0.01, 0], [0.02, -0.01, 0], [0.003, 0.004, 0]])
    return ArrayGeometry(tx, rx)


def test_analytic_response_properties():
    g = geometry()
    tgt = TargetPosition(0, 1.5, 0.3, -0.2)
    a_tx, a_rx, b = analytic_response(g, tgt, 8)
    for v in (a_tx, a_rx, b):
        assert np.max(np.abs(np.abs(v) - 1)) < 1e-12
    assert a_tx[0] == 1  # element at the origin
    bs_tx, bs_rx, _ = analytic_response(g, TargetPosition(0, 1.0, 0.0, 0.0), 4)
    np.testing.assert_allclose(bs_tx, 1, atol=1e-12)
    np.testing.assert_allclose(bs_rx, 1, atol=1e-12)
    expected_b = np.exp(-1j * 2 * np.arange(8) * 1.5 * g.delta_omega / g.c_sound)
    np.testing.assert_allclose(b, expected_b, rtol=1e-13)


def test_endfire_phase_difference():
    d = 0.004
    g = ArrayGeometry(np.array([[0.0, 0, 0], [d, 0, 0]]), np.zeros((1, 3)))
    a_tx, _, _ = analytic_response(g, TargetPosition(0, 1.0, np.pi / 2, 0.0), 2)
    diff = np.angle(a_tx[1] / a_tx[0])
    expected = np.angle(np.exp(1j * 2 * np.pi * g.f0 * d / g.c_sound))
    assert abs(diff - expected) < 1e-12


def test_broadside_compensation(rng):
    g = geometry()
    triple = analytic_response(g, TargetPosition(0, 1.0, 0.2, 0.1), 5)
    ones = tuple(np.ones_like(v) for v in triple)
    for x, y in zip(broadside_compensate(triple, ones), triple):
        np.testing.assert_array_equal(x, y)
    gains = tuple(crandn(rng, v.size) for v in triple)
    for x, v, k in zip(broadside_compensate(triple, gains), triple, gains):
        np.testing.assert_array_equal(x, v * k)
    with pytest.raises(ValueError):
        broadside_compensate(triple, (gains[0][:1], gains[1], gains[2]))


def test_compensated_broadside_reproduces_cpd_fit(rng):
    g = geometry()
    L, T = 6, 4
    bs = TargetPosition(0, 1.2, 0.0, 0.0)
    a_tx, a_rx, b = analytic_response(g, bs, L)
    e_tx, e_rx, e_b = crandn(rng, 2), crandn(rng, 3), crandn(rng, L)
    y = outer(a_tx * e_tx, a_rx * e_rx, b * e_b, crandn(rng, T))
    cpd = rank1_cpd(y)
    comp = broadside_compensate((a_tx, a_rx, b), broadside_gains(cpd, b))
    fit = outer(*comp, cpd.d)
    np.testing.assert_allclose(fit, cpd.tensor(), rtol=1e-10, atol=1e-12)
    assert np.linalg.norm(fit - y) / np.linalg.norm(y) < 1e-8


def test_canonical_phase_scale(rng):
    v = crandn(rng, 5)
    w = v * canonical_phase_scale(v, 5)
    assert abs(w[0].imag) < 1e-15 and w[0].real > 0
    assert np.isclose(np.vdot(w, w).real, 5)
    with pytest.raises(ZeroDivisionError):
        canonical_phase_scale(np.zeros(3), 3)


def test_rank1_cpd_exact(rng):
    y = outer(crandn(rng, 3), crandn(rng, 4), crandn(rng, 5), crandn(rng, 2))
    r = rank1_cpd(y)
    assert r.relative_residual < 1e-8
    assert np.all(np.diff(r.residuals) <= 1e-12)
    assert abs(r.a[0].imag) < 1e-12 and np.isclose(np.linalg.norm(r.a) ** 2, 3)
    assert np.isclose(np.max(np.abs(r.c)), 1.0)


def test_rank1_cpd_on_model_tensors():
    cfg = SimConfig(P=1, N=3, M=4, L=8, T=3, n_trials=1)
    for delta, small in ((0.0, True), (0.5, False)):
        st = truth_state(cfg, make_rng(3, 0), delta)
        y = st.model()[0]
        r = rank1_cpd(y)
        assert np.all(np.diff(r.residuals) <= 1e-12)
        if small:
            assert r.relative_residual < 1e-8
        else:
            assert r.relative_residual > 1e-4


def test_rank1_cpd_degenerate_and_validation():
    r = rank1_cpd(np.zeros((2, 2, 2, 2)))
    assert r.degenerate and not np.any(r.tensor())
    with pytest.raises(ValueError):
        rank1_cpd(np.ones((2, 2, 2, 2)), max_iter=0)


def test_response_tensor_broadcasts(rng):
    shared, pos = random_params(rng, 2, 3, 4, 1)
    q1 = response_tensor(shared.g_tx, shared.g_rx, pos.a_tx, pos.a_rx, pos.c)
    q2 = response_tensor(shared.g_tx, shared.g_rx, pos.a_tx[None], pos.a_rx[None], pos.c[None])
    np.testing.assert_array_equal(q1, q2[0])
