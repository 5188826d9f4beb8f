"""Range-angle dictionary built from a calibrated array.

Learned phase responses are close to linear in frequency, with a slope set
by the round-trip range plus a system offset ``r0``.  The offset is
recovered from the calibrated phases by a single-source shift-invariance
estimate.  New atoms for unmeasured ranges are then generated by swapping
in the linear phase of each scan range.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import response_tensor
from .tensor import vectorize_response

__all__ = [
    "PhaseModel",
    "AtomMeta",
    "Dictionary",
    "estimate_r0",
    "phase_response",
    "wrap_phase",
    "range_scan_offsets",
    "build_dictionary",
    "save_dictionary",
    "load_dictionary",
    "DictionaryFormatError",
]

DICT_MAGIC = b"UDIC"
DICT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, N, M, L, P_atoms


class DictionaryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseModel:
    c_sound: float = 343.0
    delta_omega: float = 2 * np.pi * 195e3 / 4096
    r0: float = 0.0

    def __post_init__(self):
        if not self.c_sound > 0:
            raise ValueError("c_sound must be positive")
        if not self.delta_omega > 0:
            raise ValueError("delta_omega must be positive")

    @classmethod
    def from_sampling(cls, fs: float, L_dft: int, c_sound: float = 343.0, r0: float = 0.0):
        return cls(c_sound=c_sound, delta_omega=2 * np.pi * fs / L_dft, r0=r0)

    def slope(self, r: float) -> float:
        """Phase increment per DFT bin for a target at range ``r``."""
        return 2.0 * (r + self.r0) * self.delta_omega / self.c_sound

    @property
    def ambiguity_range(self) -> float:
        """Range shift that advances the per-bin phase by a full turn."""
        return np.pi * self.c_sound / self.delta_omega


def wrap_phase(x):
    """Wrap angles into (-pi, pi]."""
    x = np.asarray(x, dtype=np.float64)
    return np.pi - np.mod(np.pi - x, 2 * np.pi)


def phase_response(model: PhaseModel, r: float, L: int) -> np.ndarray:
    """Linear phase response ``exp(-j * l * slope)`` for ``l = 0 .. L-1``."""
    if r + model.r0 < 0:
        raise ValueError("r + r0 must be nonnegative")
    return np.exp(-1j * np.arange(L) * model.slope(r))


def estimate_r0(estimates, ranges, model: PhaseModel, reduction: str = "mean") -> float:
    """System range offset from calibrated phase responses at known ranges.

    For each position the per-bin rotation ``arg(c[:-1]^H c[1:])`` equals
    ``-slope`` modulo 2*pi.  The mismatch against the slope predicted by the
    known range is wrapped into (-pi, pi] and averaged over positions
    (``reduction="sum"`` returns the plain sum instead).  Offsets are
    unambiguous within half of ``model.ambiguity_range``.
    """
    C = np.atleast_2d(np.asarray(estimates, dtype=np.complex128))
    r = np.atleast_1d(np.asarray(ranges, dtype=np.float64))
    if C.shape[0] == 0:
        raise ValueError("at least one phase response is required")
    if C.shape[1] < 2:
        raise ValueError("phase responses need at least two bins")
    if r.shape[0] != C.shape[0]:
        raise ValueError("one range per phase response is required")
    rot = np.angle(np.sum(np.conj(C[:, :-1]) * C[:, 1:], axis=1))
    mismatch = wrap_phase(-rot - 2.0 * r * model.delta_omega / model.c_sound)
    if reduction == "mean":
        agg = np.mean(mismatch)
    elif reduction == "sum":
        agg = np.sum(mismatch)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    return float(model.c_sound / (2.0 * model.delta_omega) * agg)


def range_scan_offsets(R: int, step: float) -> np.ndarray:
    """Symmetric offsets ``k * step`` for ``k = -(R // 2) .. R // 2`` (R odd)."""
    if R < 1 or R % 2 == 0:
        raise ValueError("R must be a positive odd integer")
    k = np.arange(R) - R // 2
    return k * step


@dataclass(frozen=True)
class AtomMeta:
    source: int
    range: float
    azimuth: float
    elevation: float


@dataclass
class Dictionary:
    """Vectorized responses (rows of ``atoms``) with their metadata.

    Atom vectors follow the mode-4 column order (n fastest, then m, then l),
    so that for a single target ``unfold(Y, 4) ~ outer(h, atom)``.
    """

    atoms: np.ndarray
    meta: list
    dims: tuple

    def __post_init__(self):
        self.atoms = np.ascontiguousarray(np.asarray(self.atoms, dtype=np.complex128))
        N, M, L = self.dims
        if self.atoms.ndim != 2 or self.atoms.shape[1] != N * M * L:
            raise ValueError(f"atoms must have shape (P, {N * M * L})")
        if len(self.meta) != self.atoms.shape[0]:
            raise ValueError("metadata must align 1:1 with atoms")
        self.dims = (int(N), int(M), int(L))

    def __len__(self):
        return self.atoms.shape[0]


def build_dictionary(cal, offsets: Sequence[float], model: PhaseModel, phases: str = "model",
                     positions=None) -> Dictionary:
    """Atoms for every calibrated position and scan offset.

    ``cal`` is a :class:`~uscal.calibration.CalibrationEstimate`.  Scan range
    ``r' = r_p + offset``.  ``phases="model"`` regenerates the linear phase
    for ``r'``; ``phases="learned"`` keeps the learned phase response and
    rotates it by the linear phase of the offset (verbatim at offset 0).
    Atoms are ordered position-major: ``index = p * R + k``.
    """
    offsets = np.atleast_1d(np.asarray(offsets, dtype=np.float64))
    if offsets.size == 0:
        raise ValueError("at least one scan range is required")
    if phases not in ("model", "learned"):
        raise ValueError(f"unknown phase mode {phases!r}")
    positions = positions if positions is not None else cal.positions
    st = cal.state
    P, N = st.a_tx.shape
    M, L = st.a_rx.shape[1], st.c.shape[1]
    if positions is None or len(positions) != P:
        raise ValueError("known calibration positions are required to build a dictionary")
    R = offsets.size
    atoms = np.empty((P * R, N * M * L), dtype=np.complex128)
    meta = []
    zero_model = PhaseModel(model.c_sound, model.delta_omega, 0.0)
    for p, pos in enumerate(positions):
        for k, off in enumerate(offsets):
            r_scan = pos.range + off
            if phases == "model":
                c = phase_response(model, r_scan, L)
            else:
                c = st.c[p] * np.exp(-1j * np.arange(L) * zero_model.slope(off))
            q = response_tensor(st.g_tx, st.g_rx, st.a_tx[p], st.a_rx[p], c)
            atoms[p * R + k] = vectorize_response(q)
            src = cal.used[p] if getattr(cal, "used", None) is not None else p
            meta.append(AtomMeta(int(src), float(r_scan), float(pos.azimuth), float(pos.elevation)))
    return Dictionary(atoms, meta, (N, M, L))


def save_dictionary(d: Dictionary, path) -> None:
    """Little-endian binary: header, per-atom (r', azimuth, elevation), atom data."""
    N, M, L = d.dims
    meta = np.array([[m.range, m.azimuth, m.elevation] for m in d.meta], dtype="<f8").reshape(-1, 3)
    data = np.empty(d.atoms.shape + (2,), dtype="<f8")
    data[..., 0] = d.atoms.real
    data[..., 1] = d.atoms.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DICT_MAGIC, DICT_VERSION, N, M, L, len(d)))
        fh.write(meta.tobytes())
        fh.write(data.tobytes())


def load_dictionary(path) -> Dictionary:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DictionaryFormatError("truncated dictionary file: missing header")
    magic, version, N, M, L, P = _HEADER.unpack_from(raw, 0)
    if magic != DICT_MAGIC:
        raise DictionaryFormatError(f"bad magic {magic!r}, expected {DICT_MAGIC!r}")
    if version != DICT_VERSION:
        raise DictionaryFormatError(f"unsupported dictionary version {version}")
    off = _HEADER.size
    meta_bytes = P * 3 * 8
    atom_bytes = P * N * M * L * 16
    if len(raw) < off + meta_bytes:
        raise DictionaryFormatError("truncated dictionary file: missing atom metadata")
    if len(raw) != off + meta_bytes + atom_bytes:
        raise DictionaryFormatError(
            f"dictionary payload is {len(raw) - off - meta_bytes} bytes, expected {atom_bytes}"
        )
    meta = np.frombuffer(raw, dtype="<f8", count=P * 3, offset=off).reshape(P, 3)
    data = np.frombuffer(raw, dtype="<f8", count=P * N * M * L * 2, offset=off + meta_bytes)
    data = data.reshape(P, N * M * L, 2)
    atoms = data[..., 0] + 1j * data[..., 1]
    metas = [AtomMeta(-1, float(r), float(a), float(e)) for r, a, e in meta]
    return Dictionary(atoms, metas, (N, M, L))
