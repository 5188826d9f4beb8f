"""Command-line entry points: simulate, calibrate, dictionary, image, eval.

Every subcommand reads an optional JSON config (``--config``), writes its
artifact to ``--output`` and a run manifest next to it
(``<output>.manifest.json``).  Angles are degrees on the command line and in
configs, radians internally.

Exit codes: 0 ok, 1 validation error, 2 I/O or file-format error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend
from .benchmark import (
    SimConfig,
    add_noise,
    angular_grid,
    make_rng,
    run_sweep,
    simulate_array_campaign,
    simulate_scene,
    truth_state,
    ura_geometry,
)
from .calibration import BcdConfig, CalibrationSet, calibrate
from .dictionary import (
    DictionaryFormatError,
    PhaseModel,
    build_dictionary,
    estimate_r0,
    load_dictionary,
    range_scan_offsets,
    save_dictionary,
)
from .imaging import OmpConfig, image, threshold_and_project, write_projections_csv
from .io import (
    CalibrationFormatError,
    load_estimate,
    read_calibration_file,
    save_estimate,
    write_calibration_file,
    write_manifest,
    write_npz,
)
from .model import TargetPosition, synthesize_stack

log = logging.getLogger("uscal")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "simulate": {
        "scenario": "random", "P": 10, "N": 2, "M": 8, "L": 12, "T": 4, "delta": 0.0,
        "snr_db": None, "range_m": 2.0,
        # geometric scenario only
        "nx": 4, "ny": 4, "max_deg": 40.0, "step_deg": 10.0, "r0": 0.3, "element_spread": 0.3,
        "targets": [], "scene_snr_db": 20.0,
    },
    "calibrate": {"epsilon": 1e-3, "tol": 1e-6, "max_iter": 500},
    "dictionary": {
        "R": 5, "step_m": 0.2 * 0.5 * 343.0 * 1e-3, "fs": 195e3, "L_dft": 4096, "c_sound": 343.0,
        "r0": None, "phases": "model",
    },
    "image": {"eta": 0.0, "max_iter": 100, "power_floor_db": 10.0},
    "eval": {
        "P": 50, "N": 4, "M": 16, "L": 24, "T": 10, "deltas": [0.0, 0.5],
        "snr_db": [-20.0, -10.0, 0.0, 10.0, 20.0], "n_trials": 10, "methods": ["proposed", "rank1_cpd"],
        "epsilon": 1e-3, "tol": 1e-6, "max_iter": 500,
    },
}


class ValidationError(ValueError):
    pass


def _merge_config(command: str, path) -> dict:
    cfg = dict(DEFAULTS[command])
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ValidationError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(user)
    return cfg


def _bcd(cfg: dict, deterministic: bool) -> BcdConfig:
    return BcdConfig(epsilon=cfg["epsilon"], tol=cfg["tol"], max_iter=cfg["max_iter"], deterministic=deterministic)


def _snr(value) -> float:
    return math.inf if value is None else float(value)


def cmd_simulate(args, cfg) -> dict:
    out = Path(args.output)
    rng = make_rng(args.seed, 0)
    results: dict = {}
    if cfg["scenario"] == "random":
        sim = SimConfig(P=cfg["P"], N=cfg["N"], M=cfg["M"], L=cfg["L"], T=cfg["T"], deltas=(cfg["delta"],),
                        n_trials=1, seed=args.seed)
        st = truth_state(sim, rng, cfg["delta"])
        clean = synthesize_stack(st.g_tx, st.g_rx, st.a_tx, st.a_rx, st.c, st.h)
        snr = _snr(cfg["snr_db"])
        Y = np.stack([add_noise(clean[p], snr, rng) for p in range(sim.P)])
        positions = [TargetPosition(p, float(cfg["range_m"]), 0.0, 0.0) for p in range(sim.P)]
        data = CalibrationSet(Y, positions)
    elif cfg["scenario"] == "ura":
        geom = ura_geometry(cfg["nx"], cfg["ny"])
        positions = angular_grid(cfg["max_deg"], cfg["step_deg"], cfg["range_m"])
        camp = simulate_array_campaign(geom, positions, cfg["L"], cfg["T"], cfg["delta"], cfg["r0"],
                                       _snr(cfg["snr_db"]), rng, cfg["element_spread"])
        st, data = camp.truth, camp.data
        if cfg["targets"]:
            targets = [(int(p), float(r)) for p, r in cfg["targets"]]
            if any(not 0 <= p < len(positions) for p, _ in targets):
                raise ValidationError(f"target indices must lie in [0, {len(positions)})")
            y, noise_energy = simulate_scene(camp, targets, cfg["T"], _snr(cfg["scene_snr_db"]), rng)
            p0, r_first = targets[0]
            scene = CalibrationSet(y[None], [TargetPosition(0, r_first, positions[p0].azimuth, positions[p0].elevation)])
            scene_path = out.with_name(out.name + ".scene.ucal")
            write_calibration_file(scene_path, scene)
            results.update(scene=str(scene_path), scene_noise_energy=noise_energy)
    else:
        raise ValidationError(f"unknown scenario {cfg['scenario']!r}; use 'random' or 'ura'")
    write_calibration_file(out, data)
    truth_path = out.with_name(out.name + ".truth.npz")
    write_npz(truth_path, dict(g_tx=st.g_tx, g_rx=st.g_rx, a_tx=st.a_tx, a_rx=st.a_rx, c=st.c, h=st.h))
    results.update(output=str(out), truth=str(truth_path), shape=list(data.tensors.shape))
    return results


def cmd_calibrate(args, cfg) -> dict:
    data = read_calibration_file(args.input)
    est = calibrate(data, _bcd(cfg, args.deterministic))
    if not np.isfinite(est.final_cost):
        raise FloatingPointError("calibration produced a non-finite cost")
    save_estimate(args.output, est)
    trace_path = str(args.output) + ".trace.csv"
    est.write_trace_csv(trace_path)
    return {
        "output": str(args.output), "trace": trace_path, "final_f_rel": est.final_cost,
        "n_iter": est.n_iter, "converged": est.converged, "excluded": est.excluded,
        "flags": dict(est.flags),
    }


def cmd_dictionary(args, cfg) -> dict:
    est = load_estimate(args.input)
    if est.positions is None:
        raise ValidationError("estimate has no calibration positions; cannot build a dictionary")
    if cfg["phases"] not in ("model", "learned"):
        raise ValidationError("phases must be 'model' or 'learned'")
    base = PhaseModel.from_sampling(cfg["fs"], cfg["L_dft"], cfg["c_sound"])
    r0 = cfg["r0"]
    if r0 is None:
        r0 = estimate_r0(est.state.c, [p.range for p in est.positions], base)
    model = PhaseModel(base.c_sound, base.delta_omega, float(r0))
    offsets = range_scan_offsets(int(cfg["R"]), float(cfg["step_m"]))
    d = build_dictionary(est, offsets, model, phases=cfg["phases"])
    save_dictionary(d, args.output)
    return {"output": str(args.output), "atoms": len(d), "r0_m": float(r0), "dims": list(d.dims)}


def cmd_image(args, cfg) -> dict:
    if not args.dictionary:
        raise ValidationError("image needs --dictionary")
    scene = read_calibration_file(args.input)
    if len(scene) != 1:
        raise ValidationError(f"scene file must hold exactly one tensor, found {len(scene)}")
    d = load_dictionary(args.dictionary)
    ocfg = OmpConfig(eta=cfg["eta"], max_iter=cfg["max_iter"], power_floor_db=cfg["power_floor_db"])
    est = image(scene.tensors[0], d, ocfg)
    est.write_csv(args.output)
    proj = threshold_and_project(est, ocfg)
    xz_path, ang_path = str(args.output) + ".xz.csv", str(args.output) + ".angular.csv"
    write_projections_csv(proj, xz_path, ang_path)
    return {
        "output": str(args.output), "projections": [xz_path, ang_path], "stop_reason": est.stop_reason,
        "support": est.support, "kept": [k.atom for k in proj.kept], "residual_energy": est.residual_norms,
    }


def cmd_eval(args, cfg) -> dict:
    sim = SimConfig(P=cfg["P"], N=cfg["N"], M=cfg["M"], L=cfg["L"], T=cfg["T"], deltas=tuple(cfg["deltas"]),
                    snr_db=tuple(cfg["snr_db"]), n_trials=cfg["n_trials"], seed=args.seed,
                    methods=tuple(cfg["methods"]), bcd=_bcd(cfg, args.deterministic))
    report = run_sweep(sim)
    report.write_csv(args.output)
    summary_path = str(args.output) + ".summary.json"
    report.write_json(summary_path)
    return {"output": str(args.output), "summary": summary_path, "rows": len(report.records)}


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "dictionary": cmd_dictionary,
    "image": cmd_image,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with parameter overrides")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                        help="serial kernels with a fixed reduction order (default on)")
    common.add_argument("--threads", type=int, default=None, help="numba thread count")
    common.add_argument("--output", "-o", required=True)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="uscal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic calibration set")
    sp = sub.add_parser("calibrate", parents=[common], help="estimate array responses")
    sp.add_argument("input")
    sp = sub.add_parser("dictionary", parents=[common], help="build a range-angle dictionary")
    sp.add_argument("input", help="calibration estimate (.npz)")
    sp = sub.add_parser("image", parents=[common], help="sparse imaging of a scene tensor")
    sp.add_argument("input", help="scene file (calibration format with one tensor)")
    sp.add_argument("--dictionary", required=True)
    sub.add_parser("eval", parents=[common], help="Monte Carlo MCNCC sweep")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        _backend.set_threads(args.threads)
        cfg = _merge_config(args.command, args.config)
        results = COMMANDS[args.command](args, cfg)
        write_manifest(str(args.output) + ".manifest.json", args.command,
                       {**cfg, "deterministic": args.deterministic, "threads": args.threads,
                        "backend": _backend.get_backend()},
                       args.seed, time.perf_counter() - t0, results, argv=argv)
    except (CalibrationFormatError, DictionaryFormatError, OSError) as exc:
        print(f"uscal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError, ZeroDivisionError) as exc:
        print(f"uscal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, KeyError) as exc:
        print(f"uscal: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
