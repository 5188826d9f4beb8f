import os
import subprocess
import sys

import numpy as np
import pytest

from uscal import _backend, kernels
from uscal.calibration import BcdConfig, CalibrationSet, calibrate
from uscal.kernels import _numpy as ref

from conftest import crandn

needs_numba = pytest.mark.skipif(not _backend.HAVE_NUMBA, reason="numba not installed")


def kernel_inputs(rng, P=3, N=2, M=4, L=5, T=3):
    Y = crandn(rng, P, N, M, L, T)
    h = crandn(rng, P, T)
    W = crandn(rng, P, N, M, L)
    Q = crandn(rng, P, N, M, L)
    a_tx, a_rx = crandn(rng, P, N), crandn(rng, P, M)
    c = np.exp(1j * rng.uniform(-3, 3, (P, L)))
    g_tx, g_rx = rng.uniform(0.1, 1, (L, N)), rng.uniform(0.1, 1, (L, M))
    hn2 = np.sum(np.abs(h) ** 2, axis=1)
    return {
        "project_gain": (Y, h),
        "gain_numerator": (Y, Q),
        "residual_energy": (Y, Q, h),
        "steering_tx_terms": (W, a_rx, c, g_tx, g_rx),
        "steering_rx_terms": (W, a_tx, c, g_tx, g_rx),
        "phase_terms": (W, a_tx, a_rx, g_tx, g_rx),
        "magnitude_tx_terms": (W, a_tx, a_rx, c, g_rx, hn2),
        "magnitude_rx_terms": (W, a_tx, a_rx, c, g_tx, hn2),
    }


def as_tuple(x):
    return x if isinstance(x, tuple) else (x,)


def test_numpy_kernels_match_direct_formulas(rng):
    inp = kernel_inputs(rng)
    Y, h = inp["project_gain"]
    np.testing.assert_allclose(ref.project_gain(Y, h), np.einsum("pnmlt,pt->pnml", Y, h.conj()), rtol=1e-13)
    _, Q, _ = inp["residual_energy"]
    direct = np.sum(np.abs(Y - Q[..., None] * h[:, None, None, None, :]) ** 2)
    assert ref.residual_energy(Y, Q, h) == pytest.approx(direct, rel=1e-12)
    np.testing.assert_allclose(ref.gain_numerator(Y, Q), np.einsum("pnmlt,pnml->pt", Y, Q.conj()), rtol=1e-13)
    W, a_rx, c, g_tx, g_rx = inp["steering_tx_terms"]
    b = c[:, None, None, :] * g_tx.T[None, :, None, :] * g_rx.T[None, None, :, :]
    num, den = ref.steering_tx_terms(W, a_rx, c, g_tx, g_rx)
    np.testing.assert_allclose(num, np.einsum("pnml,pm,pnml->pn", W, a_rx.conj(), b.conj()), rtol=1e-12)
    np.testing.assert_allclose(den, np.einsum("pm,pnml->pn", np.abs(a_rx) ** 2, np.abs(b) ** 2), rtol=1e-12)


def test_unknown_kernel():
    with pytest.raises(KeyError):
        kernels.get("nope")


def test_backend_selection():
    with pytest.raises(ValueError):
        _backend.set_backend("cuda")
    with _backend.use_backend("numpy"):
        assert _backend.get_backend() == "numpy"
        assert kernels.get("phase_terms") is ref.phase_terms


@needs_numba
@pytest.mark.parametrize("deterministic", [True, False])
def test_numba_matches_numpy(rng, deterministic):
    inp = kernel_inputs(rng)
    with _backend.use_backend("numba"):
        for name, args in inp.items():
            args = kernels.contiguous(*args)
            got = kernels.get(name, deterministic)(*args)
            want = getattr(ref, name)(*args)
            for g, w in zip(as_tuple(got), as_tuple(want)):
                np.testing.assert_allclose(g, w, rtol=1e-11, atol=1e-12, err_msg=name)


@needs_numba
def test_parallel_kernels_are_bit_identical_to_serial(rng):
    inp = kernel_inputs(rng, P=4, N=3, M=5, L=6, T=4)
    with _backend.use_backend("numba"):
        for name, args in inp.items():
            args = kernels.contiguous(*args)
            a = kernels.get(name, True)(*args)
            b = kernels.get(name, False)(*args)
            for x, y in zip(as_tuple(a), as_tuple(b)):
                np.testing.assert_array_equal(x, y, err_msg=name)


@needs_numba
def test_calibration_agrees_across_backends(rng):
    Y = crandn(rng, 4, 2, 3, 4, 2)
    cfg = BcdConfig(max_iter=25)
    with _backend.use_backend("numpy"):
        a = calibrate(CalibrationSet(Y), cfg)
    with _backend.use_backend("numba"):
        b = calibrate(CalibrationSet(Y), cfg)
    np.testing.assert_allclose(a.trace, b.trace, rtol=1e-9)
    np.testing.assert_allclose(a.state.model(), b.state.model(), rtol=1e-7, atol=1e-9)


def test_environment_flag_disables_numba():
    env = dict(os.environ, USCAL_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from uscal import get_backend; print(get_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
