"""Sparse multi-target imaging by orthogonal matching pursuit.

The mode-4 unfolding of a scene tensor is modeled as a sum of rank-1 terms
``h_k q_k^T`` over a few dictionary atoms ``q_k``.  Each iteration picks the
atom whose LS fit removes the most residual energy and then refits the
gains of all selected atoms jointly.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dictionary import AtomMeta, Dictionary
from .tensor import as_tensor4, unfold

log = logging.getLogger(__name__)

__all__ = [
    "OmpConfig",
    "Detection",
    "ImageEstimate",
    "Projections",
    "image",
    "residual",
    "threshold_and_project",
    "selection_scores",
]


@dataclass
class OmpConfig:
    eta: float = 0.0
    max_iter: int = 100
    power_floor_db: float = 10.0
    # Residual energy below rtol * ||Y||^2 counts as an exact fit.
    rtol: float = 1e-24
    cond_max: float = 1e12

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        self.max_iter = int(self.max_iter)


@dataclass
class Detection:
    iteration: int
    atom: int
    meta: AtomMeta
    h: np.ndarray

    @property
    def power(self) -> float:
        """Weighted received power ``||h||^2 / T^2``."""
        return float(np.vdot(self.h, self.h).real) / self.h.size**2


@dataclass
class ImageEstimate:
    detections: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def support(self) -> list:
        return [d.atom for d in self.detections]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "atom", "range_m", "azimuth_deg", "elevation_deg", "power_db"])
            for d in self.detections:
                db = 10 * np.log10(d.power) if d.power > 0 else float("-inf")
                w.writerow([
                    d.iteration, d.atom, repr(d.meta.range),
                    repr(float(np.degrees(d.meta.azimuth))), repr(float(np.degrees(d.meta.elevation))),
                    repr(float(db)),
                ])


def selection_scores(R: np.ndarray, atoms: np.ndarray, atom_norm2: Optional[np.ndarray] = None) -> np.ndarray:
    """Residual energy removed by the LS fit of each atom (rows of ``atoms``).

    Equals ``||R conj(q_p)||^2 / ||q_p||^2``, so the ranking does not change
    when an atom is rescaled.
    """
    if atom_norm2 is None:
        atom_norm2 = np.sum(atoms.real**2 + atoms.imag**2, axis=1)
    corr = R @ np.conj(atoms).T  # (T, P)
    num = np.sum(corr.real**2 + corr.imag**2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(atom_norm2 > 0, num / atom_norm2, 0.0)


def residual(y_unfolded: np.ndarray, selected_atoms, gains) -> np.ndarray:
    """``Y_(4) - sum_k h_k q_k^T`` for atoms given as rows and gains as rows."""
    Y = np.asarray(y_unfolded, dtype=np.complex128)
    A = np.asarray(selected_atoms, dtype=np.complex128).reshape(-1, Y.shape[1])
    H = np.asarray(gains, dtype=np.complex128).reshape(-1, Y.shape[0])
    if A.shape[0] != H.shape[0]:
        raise ValueError(f"{A.shape[0]} atoms but {H.shape[0]} gain vectors")
    return Y - H.T @ A


def _refit(Y4: np.ndarray, Qsel: np.ndarray):
    """Joint LS gains for the selected atoms (columns of ``Qsel``)."""
    # Y4^T ~ Qsel H with one gain row per selected atom
    sol, _, rank, sv = np.linalg.lstsq(Qsel, Y4.T, rcond=None)
    cond2 = (sv[0] / sv[-1]) ** 2 if sv.size and sv[-1] > 0 else np.inf
    return sol, rank, cond2


def image(y, dictionary: Dictionary, cfg: Optional[OmpConfig] = None) -> ImageEstimate:
    """Run OMP on an (N, M, L, T) scene tensor against ``dictionary``."""
    cfg = cfg or OmpConfig()
    y = as_tensor4(y)
    N, M, L, T = y.shape
    if (N, M, L) != tuple(dictionary.dims):
        raise ValueError(f"scene dims {(N, M, L)} do not match dictionary {dictionary.dims}")
    Y4 = unfold(y, 4)
    atoms = dictionary.atoms
    norm2 = np.sum(atoms.real**2 + atoms.imag**2, axis=1)
    y_energy = float(np.vdot(Y4, Y4).real)
    stop_at = max(cfg.eta, cfg.rtol * y_energy)

    est = ImageEstimate()
    res = Y4
    res_e = y_energy
    est.residual_norms.append(res_e)
    selected: list[int] = []
    H = np.zeros((0, T), dtype=np.complex128)
    available = norm2 > 0

    while True:
        if res_e <= stop_at:
            est.stop_reason = "residual"
            break
        if len(selected) >= cfg.max_iter:
            est.stop_reason = "max_iter"
            break
        if not np.any(available):
            est.stop_reason = "exhausted"
            break
        scores = selection_scores(res, atoms, norm2)
        scores[~available] = -np.inf
        p = int(np.argmax(scores))  # first maximum wins ties
        trial = selected + [p]
        Hn, rank, cond2 = _refit(Y4, atoms[trial].T)
        if rank < len(trial) or cond2 > cfg.cond_max:
            log.warning("OMP: atom %d is collinear with the selection (cond %.2e); stopping", p, cond2)
            est.stop_reason = "rank_deficient"
            break
        selected = trial
        available[p] = False
        H = Hn
        res = residual(Y4, atoms[selected], H)
        res_e = float(np.vdot(res, res).real)
        est.residual_norms.append(res_e)

    est.detections = [
        Detection(iteration=i + 1, atom=p, meta=dictionary.meta[p], h=H[i].copy())
        for i, p in enumerate(selected)
    ]
    return est


@dataclass
class Projections:
    kept: list
    xz: np.ndarray          # columns x, y, z, power
    angular: np.ndarray     # columns azimuth, elevation, summed power


def threshold_and_project(est: ImageEstimate, cfg: Optional[OmpConfig] = None) -> Projections:
    """Drop detections below the power floor and project the rest.

    Cartesian points use x = r sin(az) cos(el), y = r sin(el),
    z = r cos(az) cos(el).  The angular map sums the powers of detections
    that share a direction (different scan ranges).
    """
    cfg = cfg or OmpConfig()
    if not est.detections:
        return Projections([], np.zeros((0, 4)), np.zeros((0, 3)))
    peak = max(d.power for d in est.detections)
    floor = peak * 10 ** (-cfg.power_floor_db / 10)
    kept = [d for d in est.detections if d.power >= floor]
    xz = np.array([
        [
            d.meta.range * np.sin(d.meta.azimuth) * np.cos(d.meta.elevation),
            d.meta.range * np.sin(d.meta.elevation),
            d.meta.range * np.cos(d.meta.azimuth) * np.cos(d.meta.elevation),
            d.power,
        ]
        for d in kept
    ]).reshape(-1, 4)
    acc: dict = {}
    for d in kept:
        key = (d.meta.azimuth, d.meta.elevation)
        acc[key] = acc.get(key, 0.0) + d.power
    angular = np.array([[az, el, pw] for (az, el), pw in acc.items()]).reshape(-1, 3)
    return Projections(kept, xz, angular)


def write_projections_csv(proj: Projections, xz_path, angular_path) -> None:
    with open(xz_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_m", "y_m", "z_m", "power"])
        for row in proj.xz:
            w.writerow([repr(float(v)) for v in row])
    with open(angular_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["azimuth_deg", "elevation_deg", "power"])
        for az, el, pw in proj.angular:
            w.writerow([repr(float(np.degrees(az))), repr(float(np.degrees(el))), repr(float(pw))])
