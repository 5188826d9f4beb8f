"""Synthetic data, noise injection, accuracy metrics and Monte Carlo sweeps.

Randomness always flows through ``numpy.random.Generator(Philox(...))``
seeded from a :class:`numpy.random.SeedSequence`; each (delta, trial) pair
and each noise realization gets its own spawned stream, so sweeps are
reproducible and independent of evaluation order.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calibration import BcdConfig, BcdState, CalibrationSet, calibrate, rescale
from .dictionary import PhaseModel, phase_response
from .model import (
    ArrayGeometry,
    PositionParams,
    SharedParams,
    TargetPosition,
    analytic_response,
    broadside_compensate,
    broadside_gains,
    rank1_cpd,
    response_tensor,
    synthesize_stack,
)
from .tensor import vectorize_response

__all__ = [
    "SimConfig",
    "MetricReport",
    "make_rng",
    "draw_magnitudes",
    "generate_truth",
    "truth_state",
    "add_noise",
    "mcncc",
    "reconstruction_error",
    "run_sweep",
    "ura_geometry",
    "angular_grid",
    "ArrayCampaign",
    "simulate_array_campaign",
    "simulate_scene",
    "compare_dictionaries",
]

METHODS = ("proposed", "rank1_cpd")


def make_rng(seed, *key) -> np.random.Generator:
    """Counter-based generator for the stream ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SimConfig:
    P: int = 50
    N: int = 4
    M: int = 16
    L: int = 24
    T: int = 10
    deltas: tuple = (0.0, 0.5)
    snr_db: tuple = (-20.0, -10.0, 0.0, 10.0, 20.0)
    n_trials: int = 10
    seed: int = 0
    methods: tuple = METHODS
    bcd: BcdConfig = field(default_factory=BcdConfig)

    def __post_init__(self):
        if min(self.P, self.N, self.M, self.L, self.T, self.n_trials) < 1:
            raise ValueError("sizes and trial count must be >= 1")
        self.deltas = tuple(float(d) for d in np.atleast_1d(self.deltas))
        if any(not 0 <= d < 1 for d in self.deltas):
            raise ValueError("delta must lie in [0, 1)")
        self.snr_db = tuple(float(s) for s in np.atleast_1d(self.snr_db))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if isinstance(self.bcd, dict):
            self.bcd = BcdConfig(**self.bcd)

    @classmethod
    def full_scale(cls, **kw):
        """Full Monte Carlo study size (hours of CPU time)."""
        base = dict(P=250, N=4, M=60, L=24, T=10, deltas=(0.0, 0.1, 0.5),
                    snr_db=tuple(np.arange(-20.0, 30.1, 2.5)), n_trials=100)
        base.update(kw)
        return cls(**base)


def _unit_phase(rng, shape):
    return np.exp(1j * rng.uniform(-np.pi, np.pi, shape))


def draw_magnitudes(rng, shape, delta: float) -> np.ndarray:
    """Magnitude-response entries drawn uniformly from [1 - delta, 1]."""
    return rng.uniform(1.0 - delta, 1.0, shape)


def truth_state(cfg: SimConfig, rng, delta: float, canonical: bool = True) -> BcdState:
    P, N, M, L, T = cfg.P, cfg.N, cfg.M, cfg.L, cfg.T
    st = BcdState(
        g_tx=draw_magnitudes(rng, (L, N), delta),
        g_rx=draw_magnitudes(rng, (L, M), delta),
        a_tx=_unit_phase(rng, (P, N)),
        a_rx=_unit_phase(rng, (P, M)),
        c=_unit_phase(rng, (P, L)),
        h=_unit_phase(rng, (P, T)),
    )
    if canonical:
        # The reference transmitter must be all-ones; fold its spread into
        # the receivers so the modeled tensors are unchanged.
        ref = st.g_tx[:, :1].copy()
        st.g_tx = st.g_tx / ref
        st.g_rx = st.g_rx * ref
        st = rescale(st)
    return st


def generate_truth(cfg: SimConfig, rng, delta: Optional[float] = None):
    """Random ground truth ``(SharedParams, [PositionParams] * P)`` in canonical scaling."""
    delta = cfg.deltas[0] if delta is None else float(delta)
    st = truth_state(cfg, rng, delta)
    return st.shared, [st.position(p) for p in range(cfg.P)]


def add_noise(y, snr_db: float, rng) -> np.ndarray:
    """Add circular complex Gaussian noise at ``snr_db`` relative to the tensor power."""
    y = np.asarray(y, dtype=np.complex128)
    power = float(np.mean(y.real**2 + y.imag**2))
    if power == 0:
        raise ValueError("cannot set an SNR for an all-zero signal")
    if math.isinf(snr_db) and snr_db > 0:
        return y.copy()
    sigma2 = power / 10 ** (snr_db / 10)
    noise = rng.standard_normal(y.shape + (2,)) * np.sqrt(sigma2 / 2)
    return y + (noise[..., 0] + 1j * noise[..., 1])


def mcncc(truth_atoms, estimated_atoms) -> float:
    """Mean of ``1 - |q^H qhat| / (||q|| ||qhat||)`` over all atom pairs."""
    q = np.asarray(truth_atoms, dtype=np.complex128)
    qh = np.asarray(estimated_atoms, dtype=np.complex128)
    if q.shape != qh.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {qh.shape}")
    if q.ndim == 1:
        q, qh = q[None], qh[None]
    q = q.reshape(-1, q.shape[-1])
    qh = qh.reshape(-1, qh.shape[-1])
    nq = np.linalg.norm(q, axis=1)
    nqh = np.linalg.norm(qh, axis=1)
    if np.any(nq == 0) or np.any(nqh == 0):
        raise ValueError("MCNCC is undefined for zero-norm atoms")
    coh = np.abs(np.sum(np.conj(q) * qh, axis=1)) / (nq * nqh)
    return float(np.mean(np.clip(1.0 - coh, 0.0, 1.0)))


def reconstruction_error(y, y_hat):
    """Relative pointwise error ``||Y_p - Yhat_p|| / ||Y_p||``.

    A single (N, M, L, T) pair gives a float; stacked (P, ...) inputs give one
    value per position.
    """
    y = np.asarray(y, dtype=np.complex128)
    y_hat = np.asarray(y_hat, dtype=np.complex128)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    axes = tuple(range(y.ndim - 4, y.ndim))
    den = np.sqrt(np.sum(y.real**2 + y.imag**2, axis=axes))
    if np.any(den == 0):
        raise ValueError("reconstruction error is undefined for an all-zero measurement")
    d = y - y_hat
    err = np.sqrt(np.sum(d.real**2 + d.imag**2, axis=axes)) / den
    return float(err) if np.ndim(err) == 0 else err


def _atoms(st: BcdState) -> np.ndarray:
    return vectorize_response(st.response())


@dataclass
class MetricReport:
    seed: int
    config: dict
    records: list = field(default_factory=list)
    zeta_rel: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    def aggregate(self) -> dict:
        """Mean MCNCC keyed by ``(method, delta, snr_db)``."""
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r["method"], r["delta"], r["snr_db"]), []).append(r["mcncc"])
        return {k: math.fsum(v) / len(v) for k, v in sorted(groups.items())}

    def curve(self, method: str, delta: float) -> tuple:
        agg = self.aggregate()
        pts = sorted((s, v) for (m, d, s), v in agg.items() if m == method and d == delta)
        return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["snr_db", "delta", "method", "trial", "mcncc"])
            for r in self.records:
                w.writerow([repr(r["snr_db"]), repr(r["delta"]), r["method"], r["trial"], repr(r["mcncc"])])

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "mcncc_mean": [
                {"method": m, "delta": d, "snr_db": s, "mcncc": v}
                for (m, d, s), v in self.aggregate().items()
            ],
            "zeta_rel": [
                {"snr_db": s, "delta": d, "trial": t, "mean": float(np.mean(z)), "max": float(np.max(z))}
                for (s, d, t), z in sorted(self.zeta_rel.items())
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _config_dict(cfg: SimConfig) -> dict:
    d = asdict(cfg)
    d["deltas"] = list(cfg.deltas)
    d["snr_db"] = list(cfg.snr_db)
    d["methods"] = list(cfg.methods)
    return d


def run_sweep(cfg: SimConfig, progress=None) -> MetricReport:
    """Monte Carlo MCNCC over (delta, trial, snr, method).

    The ground truth is drawn once per (delta, trial) and shared across the
    SNR grid; every SNR point gets an independent noise stream.
    """
    t0 = time.perf_counter()
    report = MetricReport(seed=cfg.seed, config=_config_dict(cfg))
    for di, delta in enumerate(cfg.deltas):
        for trial in range(cfg.n_trials):
            truth = truth_state(cfg, make_rng(cfg.seed, 0, di, trial), delta)
            q_true = _atoms(truth)
            clean = synthesize_stack(truth.g_tx, truth.g_rx, truth.a_tx, truth.a_rx, truth.c, truth.h)
            for si, snr in enumerate(cfg.snr_db):
                rng = make_rng(cfg.seed, 1, di, trial, si)
                Y = np.stack([add_noise(clean[p], snr, rng) for p in range(cfg.P)])
                if "proposed" in cfg.methods:
                    est = calibrate(CalibrationSet(Y), cfg.bcd)
                    report.records.append(dict(snr_db=snr, delta=delta, method="proposed", trial=trial,
                                               mcncc=mcncc(q_true, _atoms(est.state)), n_iter=est.n_iter))
                    report.zeta_rel[(snr, delta, trial)] = reconstruction_error(Y, est.state.model())
                if "rank1_cpd" in cfg.methods:
                    q_cpd = np.empty_like(q_true)
                    for p in range(cfg.P):
                        r1 = rank1_cpd(Y[p])
                        q_cpd[p] = vectorize_response(r1.a[:, None, None] * r1.b[None, :, None] * r1.c[None, None, :])
                    report.records.append(dict(snr_db=snr, delta=delta, method="rank1_cpd", trial=trial,
                                               mcncc=mcncc(q_true, q_cpd), n_iter=0))
                if progress is not None:
                    progress(delta, trial, snr)
    report.elapsed_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# Array-geometry scenarios (end-to-end pipeline and analytic baselines)


def ura_geometry(nx: int = 4, ny: int = 4, pitch: Optional[float] = None, **kw) -> ArrayGeometry:
    """Planar URA in the z=0 plane; the four corners transmit, the rest receive."""
    g = ArrayGeometry(np.zeros((1, 3)), np.zeros((1, 3)), **kw)
    pitch = pitch if pitch is not None else 0.5 * g.c_sound / g.f0
    xs = (np.arange(nx) - (nx - 1) / 2) * pitch
    ys = (np.arange(ny) - (ny - 1) / 2) * pitch
    grid = np.array([[x, y, 0.0] for y in ys for x in xs])
    corner = np.zeros(len(grid), dtype=bool)
    for idx in (0, nx - 1, nx * (ny - 1), nx * ny - 1):
        corner[idx] = True
    return ArrayGeometry(grid[corner], grid[~corner], g.f0, g.fs, g.c_sound, g.L_dft)


def angular_grid(max_deg: float = 60.0, step_deg: float = 20.0, r: float = 2.0) -> list:
    """Calibration positions on a spherical shell; broadside is always included."""
    angles = np.radians(np.arange(-max_deg, max_deg + 1e-9, step_deg))
    out = []
    for el in angles:
        for az in angles:
            out.append(TargetPosition(len(out), r, float(az), float(el)))
    return out


@dataclass
class ArrayCampaign:
    """Ground truth and measurements of a geometric calibration campaign."""

    geometry: ArrayGeometry
    positions: list
    truth: BcdState
    element_tx: np.ndarray
    element_rx: np.ndarray
    model: PhaseModel
    data: CalibrationSet


def simulate_array_campaign(geom: ArrayGeometry, positions: Sequence[TargetPosition], L: int, T: int,
                            delta: float, r0: float, snr_db: float, rng,
                            element_spread: float = 0.3) -> ArrayCampaign:
    """Calibration data from a geometric array with unknown element gains.

    Steering vectors are the analytic far-field responses distorted by fixed
    complex per-element gains; phase responses are linear in frequency with
    slope set by ``range + r0``.
    """
    N, M = len(geom.tx_positions), len(geom.rx_positions)
    P = len(positions)
    model = PhaseModel(geom.c_sound, geom.delta_omega, r0)
    e_tx = rng.uniform(1 - element_spread, 1, N) * _unit_phase(rng, N)
    e_rx = rng.uniform(1 - element_spread, 1, M) * _unit_phase(rng, M)
    a_tx = np.empty((P, N), complex)
    a_rx = np.empty((P, M), complex)
    c = np.empty((P, L), complex)
    for p, pos in enumerate(positions):
        at, ar, _ = analytic_response(geom, pos, L)
        a_tx[p], a_rx[p] = at * e_tx, ar * e_rx
        c[p] = phase_response(model, pos.range, L)
    st = BcdState(
        g_tx=draw_magnitudes(rng, (L, N), delta),
        g_rx=draw_magnitudes(rng, (L, M), delta),
        a_tx=a_tx, a_rx=a_rx, c=c,
        h=_unit_phase(rng, (P, T)) * rng.uniform(0.5, 1.0, (P, 1)),
    )
    ref = st.g_tx[:, :1].copy()
    st.g_tx, st.g_rx = st.g_tx / ref, st.g_rx * ref
    st = rescale(st)
    clean = synthesize_stack(st.g_tx, st.g_rx, st.a_tx, st.a_rx, st.c, st.h)
    Y = np.stack([add_noise(clean[p], snr_db, rng) for p in range(P)])
    return ArrayCampaign(geom, list(positions), st, e_tx, e_rx, model, CalibrationSet(Y, positions))


def simulate_scene(campaign: ArrayCampaign, targets: Sequence[tuple], T: int, snr_db: float, rng):
    """Superpose targets given as ``(calibration index, range)`` pairs.

    Returns ``(Y, noise_energy)`` for an (N, M, L, T) scene tensor.
    """
    st = campaign.truth
    L = st.c.shape[1]
    y = 0
    for p, r in targets:
        c = phase_response(campaign.model, r, L)
        q = response_tensor(st.g_tx, st.g_rx, st.a_tx[p], st.a_rx[p], c)
        y = y + q[..., None] * _unit_phase(rng, T)
    y = np.asarray(y)
    noisy = add_noise(y, snr_db, rng)
    noise = noisy - y
    return noisy, float(np.vdot(noise, noise).real)


def compare_dictionaries(campaign: ArrayCampaign, bcd: Optional[BcdConfig] = None) -> dict:
    """MCNCC of each calibration method's responses at the calibration positions.

    Methods: the coupled BCD model, positionwise rank-1 CPD, the analytic
    model, and the analytic model with broadside compensation.
    """
    st = campaign.truth
    q_true = _atoms(st)
    Y = campaign.data.tensors
    P, N, M, L, _ = Y.shape
    out = {}
    est = calibrate(campaign.data, bcd or BcdConfig())
    out["proposed"] = mcncc(q_true, _atoms(est.state))

    cpd = [rank1_cpd(Y[p]) for p in range(P)]
    q_cpd = np.stack([vectorize_response(r.a[:, None, None] * r.b[None, :, None] * r.c[None, None, :]) for r in cpd])
    out["rank1_cpd"] = mcncc(q_true, q_cpd)

    analytic = [analytic_response(campaign.geometry, pos, L) for pos in campaign.positions]

    def q_of(triple):
        a, b, c = triple
        return vectorize_response(a[:, None, None] * b[None, :, None] * c[None, None, :])

    out["analytic"] = mcncc(q_true, np.stack([q_of(t) for t in analytic]))
    broadside = min(range(P), key=lambda p: abs(campaign.positions[p].azimuth) + abs(campaign.positions[p].elevation))
    gains = broadside_gains(cpd[broadside], analytic[broadside][2])
    out["analytic_broadside"] = mcncc(q_true, np.stack([q_of(broadside_compensate(t, gains)) for t in analytic]))
    return out
