"""Binary calibration sets, estimate archives and run manifests.

Calibration file layout (little-endian)::

    header   "<4sIIIIII"  magic b"UCAL", version, N, M, L, T, P
    records  P x (range_m, azimuth_rad, elevation_rad) as float64
    tensors  P x N x M x L x T complex values as interleaved (re, im) float64,
             row-major with t fastest
"""
from __future__ import annotations

import json
import platform
import struct
import sys
import zipfile
from collections import Counter
from pathlib import Path

import numpy as np

from .calibration import BcdState, CalibrationEstimate, CalibrationSet
from .model import TargetPosition

__all__ = [
    "CalibrationFormatError",
    "write_calibration_file",
    "read_calibration_file",
    "save_estimate",
    "load_estimate",
    "write_manifest",
    "write_npz",
    "versions",
]

CAL_MAGIC = b"UCAL"
CAL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")


class CalibrationFormatError(ValueError):
    pass


def write_calibration_file(path, data: CalibrationSet) -> None:
    Y = data.tensors
    P, N, M, L, T = Y.shape
    if data.positions is None or len(data.positions) != P:
        raise ValueError("calibration files need one position record per tensor")
    rec = np.array([[p.range, p.azimuth, p.elevation] for p in data.positions], dtype="<f8")
    payload = np.empty(Y.shape + (2,), dtype="<f8")
    payload[..., 0] = Y.real
    payload[..., 1] = Y.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CAL_MAGIC, CAL_VERSION, N, M, L, T, P))
        fh.write(rec.tobytes())
        fh.write(payload.tobytes())


def read_calibration_file(path) -> CalibrationSet:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CalibrationFormatError("truncated calibration file: missing header")
    magic, version, N, M, L, T, P = _HEADER.unpack_from(raw, 0)
    if magic != CAL_MAGIC:
        raise CalibrationFormatError(f"bad magic {magic!r}, expected {CAL_MAGIC!r}")
    if version != CAL_VERSION:
        raise CalibrationFormatError(f"unsupported calibration file version {version}")
    if P == 0:
        raise CalibrationFormatError("calibration file holds an empty set (P = 0)")
    if min(N, M, L, T) == 0:
        raise CalibrationFormatError(f"invalid tensor dimensions {(N, M, L, T)}")
    off = _HEADER.size
    rec_bytes = P * 3 * 8
    data_bytes = P * N * M * L * T * 16
    if len(raw) < off + rec_bytes:
        raise CalibrationFormatError("truncated calibration file: missing position records")
    if len(raw) < off + rec_bytes + data_bytes:
        raise CalibrationFormatError("truncated calibration file: missing tensor payload")
    if len(raw) > off + rec_bytes + data_bytes:
        raise CalibrationFormatError("calibration file has trailing bytes after the tensor payload")
    rec = np.frombuffer(raw, dtype="<f8", count=P * 3, offset=off).reshape(P, 3)
    vals = np.frombuffer(raw, dtype="<f8", count=P * N * M * L * T * 2, offset=off + rec_bytes)
    vals = vals.reshape(P, N, M, L, T, 2)
    Y = vals[..., 0] + 1j * vals[..., 1]
    positions = [TargetPosition(i, float(r), float(a), float(e)) for i, (r, a, e) in enumerate(rec)]
    return CalibrationSet(Y, positions)


def save_estimate(path, est: CalibrationEstimate) -> None:
    """Store a calibration estimate as an ``.npz`` archive."""
    st = est.state
    pos = est.positions
    rec = np.array([[p.range, p.azimuth, p.elevation] for p in pos]) if pos else np.zeros((0, 3))
    arrays = dict(
        g_tx=st.g_tx, g_rx=st.g_rx, a_tx=st.a_tx, a_rx=st.a_rx, c=st.c, h=st.h,
        trace=est.trace, block_costs=est.block_costs,
        used=np.asarray(est.used, dtype=np.int64), excluded=np.asarray(est.excluded, dtype=np.int64),
        converged=np.bool_(est.converged), final_cost=np.float64(est.final_cost),
        positions=rec, flags=np.array(json.dumps(dict(st.flags), sort_keys=True)),
    )
    write_npz(path, arrays)


def write_npz(path, arrays: dict) -> None:
    """``np.savez`` equivalent with a fixed member timestamp.

    np.savez stamps members with the current time; the fixed stamp keeps
    repeated runs byte-identical.
    """
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, value in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(value), allow_pickle=False)


def load_estimate(path) -> CalibrationEstimate:
    try:
        z = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise CalibrationFormatError(f"not a calibration estimate archive: {exc}") from exc
    with z:
        missing = {"g_tx", "g_rx", "a_tx", "a_rx", "c", "h", "trace"} - set(z.files)
        if missing:
            raise CalibrationFormatError(f"estimate archive lacks {sorted(missing)}")
        st = BcdState(z["g_tx"], z["g_rx"], z["a_tx"], z["a_rx"], z["c"], z["h"],
                      Counter(json.loads(str(z["flags"]))))
        rec = z["positions"]
        positions = [TargetPosition(i, *map(float, r)) for i, r in enumerate(rec)] if len(rec) else None
        return CalibrationEstimate(
            state=st, trace=z["trace"], block_costs=z["block_costs"],
            used=[int(u) for u in z["used"]], excluded=[int(u) for u in z["excluded"]],
            converged=bool(z["converged"]), final_cost=float(z["final_cost"]), positions=positions,
        )


def versions() -> dict:
    from . import __version__

    out = {"uscal": __version__, "python": platform.python_version(), "numpy": np.__version__}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        out["numba"] = None
    return out


def write_manifest(path, command: str, config: dict, seed, wall_time_s: float, results: dict,
                   argv=None) -> dict:
    man = {
        "command": command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "versions": versions(),
        "seed": seed,
        "config": config,
        "wall_time_s": wall_time_s,
        "results": results,
    }
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=_json_default)
    return man


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")
