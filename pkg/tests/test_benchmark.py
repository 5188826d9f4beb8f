import csv
import json
import random

import numpy as np
import pytest
from scipy import stats

from uscal.benchmark import (
    MetricReport,
    SimConfig,
    add_noise,
    angular_grid,
    compare_dictionaries,
    draw_magnitudes,
    generate_truth,
    make_rng,
    mcncc,
    reconstruction_error,
    run_sweep,
    simulate_array_campaign,
    simulate_scene,
    ura_geometry,
)
from uscal.calibration import BcdConfig

from conftest import crandn


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(deltas=(1.0,))
    with pytest.raises(ValueError):
        SimConfig(deltas=(-0.1,))
    with pytest.raises(ValueError):
        SimConfig(P=0)
    with pytest.raises(ValueError):
        SimConfig(methods=("music",))
    big = SimConfig.full_scale()
    assert (big.P, big.M, big.n_trials) == (250, 60, 100)


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(5, 1, 2).standard_normal(4)
    np.testing.assert_array_equal(a, make_rng(5, 1, 2).standard_normal(4))
    assert not np.allclose(a, make_rng(5, 1, 3).standard_normal(4))
    assert isinstance(make_rng(0).bit_generator, np.random.Philox)


def test_magnitude_draws_are_uniform():
    g = draw_magnitudes(make_rng(0), 100_000, 0.5)
    assert g.min() >= 0.5 and g.max() <= 1.0
    assert stats.kstest(g, stats.uniform(loc=0.5, scale=0.5).cdf).pvalue > 0.01


def test_generate_truth_constraints():
    cfg = SimConfig(P=5, N=3, M=4, L=6, T=2, deltas=(0.0,), n_trials=1)
    shared, positions = generate_truth(cfg, make_rng(1))
    np.testing.assert_array_equal(shared.g_tx, 1.0)
    np.testing.assert_array_equal(shared.g_rx, 1.0)
    assert len(positions) == 5
    for pos in positions:
        assert pos.constraint_violations() == []
        for v in (pos.a_tx, pos.a_rx, pos.c, pos.h):
            np.testing.assert_allclose(np.abs(v), 1, atol=1e-12)
    shared, positions = generate_truth(cfg, make_rng(1), delta=0.5)
    assert shared.constraint_violations() == []
    assert shared.g_rx.min() >= 0.25 - 1e-12  # ratio of two draws from [0.5, 1]


def test_add_noise_examples():
    rng = make_rng(2)
    y = crandn(rng, 4, 5, 6, 7)
    np.testing.assert_array_equal(add_noise(y, np.inf, rng), y)
    with pytest.raises(ValueError):
        add_noise(np.zeros((2, 2, 2, 2)), 10, rng)
    big = crandn(rng, 10, 10, 100, 100)
    for snr in (-10.0, 0.0, 13.0):
        noise = add_noise(big, snr, rng) - big
        ratio = 10 * np.log10(np.sum(np.abs(big) ** 2) / np.sum(np.abs(noise) ** 2))
        assert abs(ratio - snr) < 0.1
    noise = add_noise(big, 0.0, rng) - big
    assert np.sum(np.abs(noise) ** 2) / np.sum(np.abs(big) ** 2) == pytest.approx(1.0, rel=0.01)
    # circular: real and imaginary parts carry equal power, uncorrelated
    assert np.mean(noise.real**2) == pytest.approx(np.mean(noise.imag**2), rel=0.02)
    assert abs(np.mean(noise * noise)) < 0.01 * np.mean(np.abs(noise) ** 2)


def test_mcncc_examples():
    rng = make_rng(3)
    q = crandn(rng, 7, 20)
    kappa = crandn(rng, 7, 1)
    assert mcncc(q, kappa * q) <= 1e-15
    assert mcncc(q[0], (2 - 5j) * q[0]) <= 1e-15
    assert mcncc(np.array([1, 0, 0j]), np.array([0, 1j, 0])) == 1.0
    qh = crandn(rng, 7, 20)
    direct = np.mean([1 - abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)) for a, b in zip(q, qh)])
    assert mcncc(q, qh) == pytest.approx(direct, rel=1e-12)
    assert 0 <= mcncc(q, qh) <= 1
    with pytest.raises(ValueError):
        mcncc(q, qh[:3])
    with pytest.raises(ValueError):
        mcncc(np.zeros(3), np.ones(3))


def test_reconstruction_error_examples():
    rng = make_rng(4)
    y = crandn(rng, 3, 2, 3, 4, 2)
    np.testing.assert_array_equal(reconstruction_error(y, y), 0)
    np.testing.assert_allclose(reconstruction_error(y, np.zeros_like(y)), 1, rtol=1e-15)
    yh = y + 0.3 * crandn(rng, *y.shape)
    direct = [np.linalg.norm(y[p] - yh[p]) / np.linalg.norm(y[p]) for p in range(3)]
    np.testing.assert_allclose(reconstruction_error(y, yh), direct, rtol=1e-12)
    assert isinstance(reconstruction_error(y[0], yh[0]), float)
    with pytest.raises(ValueError):
        reconstruction_error(np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1)))
    with pytest.raises(ValueError):
        reconstruction_error(y, y[:2])


TINY = dict(P=6, N=2, M=4, L=6, T=3)


def test_noiseless_sweep_recovers_truth():
    cfg = SimConfig(**TINY, deltas=(0.0, 0.5), snr_db=(np.inf,), n_trials=1, methods=("proposed",),
                    bcd=BcdConfig(tol=1e-12))
    rep = run_sweep(cfg)
    assert all(r["mcncc"] < 1e-6 for r in rep.records)
    assert all(np.all(z < 1e-5) for z in rep.zeta_rel.values())


def test_sweep_reproducible_and_csv(tmp_path):
    cfg = SimConfig(**TINY, deltas=(0.0, 0.5), snr_db=(0.0, 10.0), n_trials=2, seed=9)
    a, b = run_sweep(cfg), run_sweep(cfg)
    assert [r["mcncc"] for r in a.records] == [r["mcncc"] for r in b.records]
    path = tmp_path / "sweep.csv"
    a.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["snr_db", "delta", "method", "trial", "mcncc"]
    assert len(rows) - 1 == 2 * 2 * 2 * 2
    for r in rows[1:]:
        assert 0.0 <= float(r[4]) <= 1.0
    a.write_json(tmp_path / "s.json")
    summary = json.load(open(tmp_path / "s.json"))
    assert summary["seed"] == 9 and len(summary["mcncc_mean"]) == 8
    assert all(z["mean"] >= 0 for z in summary["zeta_rel"])
    # the other seed gives other numbers
    c = run_sweep(SimConfig(**TINY, deltas=(0.0, 0.5), snr_db=(0.0, 10.0), n_trials=2, seed=10))
    assert [r["mcncc"] for r in c.records] != [r["mcncc"] for r in a.records]


def test_aggregation_is_order_independent():
    rng = np.random.default_rng(0)
    recs = [dict(snr_db=float(s), delta=0.0, method="proposed", trial=t, mcncc=float(v))
            for s in range(3) for t, v in enumerate(rng.uniform(0, 1, 50) * 10.0 ** rng.integers(-8, 0, 50))]
    a = MetricReport(0, {}, list(recs)).aggregate()
    random.Random(1).shuffle(recs)
    b = MetricReport(0, {}, recs).aggregate()
    for k in a:
        assert abs(a[k] - b[k]) <= 1e-12 * abs(a[k])


def test_mcncc_decreases_with_snr_on_average():
    cfg = SimConfig(**TINY, deltas=(0.3,), snr_db=(-10.0, 0.0, 10.0, 20.0), n_trials=20, methods=("proposed",), seed=4)
    snr, curve = run_sweep(cfg).curve("proposed", 0.3)
    assert np.all(np.diff(curve) <= 0), curve


def test_geometric_campaign_and_baselines():
    geom = ura_geometry(4, 4)
    assert geom.tx_positions.shape == (4, 3) and geom.rx_positions.shape == (12, 3)
    pos = angular_grid(30, 15, 2.0)
    assert len(pos) == 25 and any(p.azimuth == 0 and p.elevation == 0 for p in pos)
    camp = simulate_array_campaign(geom, pos, 10, 3, 0.5, 0.3, 25.0, make_rng(6))
    res = compare_dictionaries(camp)
    assert set(res) == {"proposed", "rank1_cpd", "analytic", "analytic_broadside"}
    assert res["proposed"] < res["rank1_cpd"] / 10
    assert res["analytic_broadside"] < res["analytic"]
    y, noise_energy = simulate_scene(camp, [(0, 2.0), (12, 2.1)], 3, 20.0, make_rng(7))
    assert y.shape == (4, 12, 10, 3) and noise_energy > 0
