"""Command-line front end: simulate scenes, reconstruct hidden volumes,
evaluate depth maps, and benchmark domain-reduction behavior.

Exit codes: 0 success, 2 invalid input (bad scene/config/arguments),
3 reconstruction aborted (empty domain or non-finite loss), 4 no jointly
valid pixels during evaluation.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import evaluate, forward, io, simulate
from .errors import NoOverlapError, ReconstructionAborted
from .geometry import (
    FalloffMode,
    make_cylindrical_confocal_geometry,
    make_planar_confocal_geometry,
    with_single_laser,
)
from .optim import ReconstructionConfig, reconstruct

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_ABORTED = 3
EXIT_NO_OVERLAP = 4


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def load_config(path) -> ReconstructionConfig:
    """Build a ReconstructionConfig from a JSON file; all keys optional."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config JSON must be an object")
    known = {f.name for f in dataclass_fields(ReconstructionConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}; known: {sorted(known)}")
    kwargs = dict(doc)
    if "resolution_ladder" in kwargs:
        kwargs["resolution_ladder"] = tuple(tuple(int(n) for n in r) for r in kwargs["resolution_ladder"])
    if "expansion_steps" in kwargs:
        kwargs["expansion_steps"] = tuple(int(s) for s in kwargs["expansion_steps"])
    if kwargs.get("transient_coarse_to_fine") is not None and "transient_coarse_to_fine" in kwargs:
        kwargs["transient_coarse_to_fine"] = tuple(
            (int(a), int(b)) for a, b in kwargs["transient_coarse_to_fine"]
        )
    cfg = ReconstructionConfig(**kwargs)
    cfg.validate()
    return cfg


def _geometry_from_args(args) -> "ScanGeometry":
    if args.wall_shape == "planar":
        g = make_planar_confocal_geometry(
            args.wall_width, args.wall_height, args.wall_nx, args.wall_ny,
            args.wall_z, FalloffMode(args.falloff),
        )
    else:
        g = make_cylindrical_confocal_geometry(
            args.wall_width, args.wall_height, args.wall_nx, args.wall_ny,
            args.wall_z, args.wall_sag_deg, FalloffMode(args.falloff),
        )
    if args.laser is not None:
        g = with_single_laser(g, args.laser)
    return g


def cmd_simulate(args) -> int:
    try:
        with open(args.scene, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict) or "kind" not in doc:
            raise ValueError("scene JSON must be an object with a 'kind' key")
        surfels = simulate.make_scene(doc["kind"], doc.get("params", {}))
        g = _geometry_from_args(args)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        return _fail(f"malformed scene or geometry: {exc}", EXIT_INVALID_INPUT)
    tv = simulate.render(
        surfels, g, args.bin_length, args.path_offset, args.bins,
        photon_scale=args.noise_scale, noise_seed=args.seed,
    )
    base = io.write_transient_bundle(args.out, tv, g)
    print(f"wrote {base}.json / {base}.raw")
    print(f"pairs={tv.n_pairs} bins={tv.n_bins} surfels={len(surfels)} "
          f"total_energy={tv.data.sum():.6g}")
    return EXIT_OK


def _parse_bbox(values) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(values[:3], dtype=np.float64)
    hi = np.asarray(values[3:], dtype=np.float64)
    if np.any(hi - lo <= 0):
        raise ValueError(f"bbox must enclose a positive volume, got lo={lo} hi={hi}")
    return lo, hi


def _write_artifacts(prefix: str, field, domain, trace, g, args) -> None:
    falloff = g.falloff_mode
    vol = evaluate.masked_albedo_volume(field, domain, falloff)
    io.write_volume(
        f"{prefix}_volume", vol, field.origin, field.extent,
        extra={"threads": args.threads, "seed_note": "see config", "content": "effective_albedo"},
    )
    io.write_image(evaluate.max_intensity_projection(vol), f"{prefix}_mip.pgm", "pgm")
    dm = evaluate.depth_from_argmax(vol, field.bin_centers(2), args.depth_threshold)
    io.write_depth_map(f"{prefix}_depth", dm)
    io.write_image(np.where(dm.valid, dm.values, dm.values.max()), f"{prefix}_depth.pgm", "pgm")
    cloud = evaluate.export_point_cloud(
        field, domain, args.depth_threshold, g.wall_centroid(), falloff
    )
    io.write_ply(cloud, f"{prefix}_cloud.ply")
    trace_path = args.trace if args.trace else f"{prefix}_trace.csv"
    io.write_csv(trace, trace_path, zero_timings=not args.timings)


def cmd_reconstruct(args) -> int:
    try:
        tv, g = io.read_transient_bundle(args.bundle)
        bounds = _parse_bbox(args.bbox)
        cfg = load_config(args.config) if args.config else ReconstructionConfig()
        cfg.validate()
    except (OSError, ValueError, json.JSONDecodeError, TypeError) as exc:
        return _fail(f"invalid input: {exc}", EXIT_INVALID_INPUT)
    try:
        field, domain, trace = reconstruct(tv, g, bounds, cfg, threads=args.threads)
    except ReconstructionAborted as exc:
        _write_artifacts(f"{args.out_prefix}.aborted", exc.field, exc.domain, exc.trace, g, args)
        return _fail(f"aborted: {exc.reason} (state saved with .aborted prefix)", EXIT_ABORTED)
    _write_artifacts(args.out_prefix, field, domain, trace, g, args)
    print(f"done: steps={len(trace)} final_loss={trace[-1].loss:.6g} "
          f"active_ratio={domain.active_ratio:.4f}")
    return EXIT_OK


def _load_pred_depth(path, threshold: float) -> evaluate.DepthMap:
    kind = io.file_kind(path)
    if kind == "depth_map":
        return io.read_depth_map(path)
    if kind == "volume":
        vol, origin, extent = io.read_volume(path)
        nz = vol.shape[2]
        z_coords = origin[2] + (np.arange(nz) + 0.5) * (extent[2] / nz)
        return evaluate.depth_from_argmax(vol, z_coords, threshold)
    raise ValueError(f"{path}: expected a volume or depth_map file, got kind={kind!r}")


def cmd_evaluate(args) -> int:
    try:
        pred = _load_pred_depth(args.pred, args.threshold)
        truth = io.read_depth_map(args.truth)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        return _fail(f"invalid input: {exc}", EXIT_INVALID_INPUT)
    try:
        mae, rmse = evaluate.depth_metrics(pred, truth, upsample=args.upsample)
    except NoOverlapError as exc:
        return _fail(str(exc), EXIT_NO_OVERLAP)
    except ValueError as exc:
        return _fail(f"invalid input: {exc}", EXIT_INVALID_INPUT)
    if pred.shape != truth.shape:
        pred_valid = evaluate._bilinear_resize(pred.values, pred.valid, truth.shape)[1]
    else:
        pred_valid = pred.valid
    joint = pred_valid & truth.valid
    frac = float(joint.sum() / truth.valid.sum()) if truth.valid.any() else 0.0
    print(json.dumps({"mae": mae, "rmse": rmse, "valid_pixel_fraction": frac}, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        tv, g = io.read_transient_bundle(args.bundle)
        bounds = _parse_bbox(args.bbox)
        cfg = load_config(args.config) if args.config else ReconstructionConfig()
        cfg.validate()
    except (OSError, ValueError, json.JSONDecodeError, TypeError) as exc:
        return _fail(f"invalid input: {exc}", EXIT_INVALID_INPUT)
    # Warm up allocators and thread pools so step 1 measures steady-state cost.
    warm = np.zeros((1, 3)) + g.wall_centroid() + np.array([0.0, 0.0, 1e-3])
    forward.synthesize(warm, np.ones(1), np.ones((1, 3)), g, 1.0,
                       tv.bin_length, tv.path_offset, tv.n_bins)
    t_start = time.perf_counter()
    try:
        field, domain, trace = reconstruct(tv, g, bounds, cfg, threads=args.threads)
    except ReconstructionAborted as exc:
        return _fail(f"aborted: {exc.reason}", EXIT_ABORTED)
    total = time.perf_counter() - t_start
    tail = trace[-min(50, len(trace)):]
    initial_iter = trace[0].iter_seconds
    final_iter = statistics.median(r.iter_seconds for r in tail)
    report = {
        "threads": args.threads,
        "steps_total": len(trace),
        "total_seconds": total,
        "summary": {
            "initial_iter_s": initial_iter,
            "final_iter_s": final_iter,
            "speedup": initial_iter / final_iter if final_iter > 0 else float("inf"),
            "final_active_ratio": domain.active_ratio,
        },
        "steps": [
            {"step": r.step, "loss": r.loss, "active_ratio": r.active_ratio,
             "iter_seconds": r.iter_seconds}
            for r in trace
        ],
    }
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlostk",
        description="Reconstruct hidden scenes from transient measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a synthetic scene to a transient bundle")
    p_sim.add_argument("scene", help="scene JSON: {'kind': ..., 'params': {...}}")
    p_sim.add_argument("--out", required=True, help="output bundle base path")
    p_sim.add_argument("--wall-width", type=float, default=1.0)
    p_sim.add_argument("--wall-height", type=float, default=1.0)
    p_sim.add_argument("--wall-nx", type=int, default=16)
    p_sim.add_argument("--wall-ny", type=int, default=16)
    p_sim.add_argument("--wall-z", type=float, default=0.0)
    p_sim.add_argument("--wall-shape", choices=("planar", "cylindrical"), default="planar")
    p_sim.add_argument("--wall-sag-deg", type=float, default=15.0,
                       help="cylindrical arc half-angle (degrees)")
    p_sim.add_argument("--laser", type=float, nargs=3, metavar=("X", "Y", "Z"),
                       help="single fixed laser point (makes the setup non-confocal)")
    p_sim.add_argument("--falloff", choices=[m.value for m in FalloffMode],
                       default=FalloffMode.LAMBERTIAN.value)
    p_sim.add_argument("--bins", type=int, default=512)
    p_sim.add_argument("--bin-length", type=float, default=0.003)
    p_sim.add_argument("--path-offset", type=float, default=0.0)
    p_sim.add_argument("--noise-scale", type=float, default=None,
                       help="Poisson photon scale; omit for a noiseless render")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.set_defaults(func=cmd_simulate)

    p_rec = sub.add_parser("reconstruct", help="optimize a hidden volume against a bundle")
    p_rec.add_argument("bundle", help="transient bundle base path")
    p_rec.add_argument("--bbox", type=float, nargs=6, required=True,
                       metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"),
                       help="hidden-volume bounding box corners")
    p_rec.add_argument("--config", help="reconstruction config JSON (all keys optional)")
    p_rec.add_argument("--out-prefix", required=True)
    p_rec.add_argument("--trace", help="trace CSV path (default <out-prefix>_trace.csv)")
    p_rec.add_argument("--depth-threshold", type=float, default=0.05,
                       help="relative threshold for depth/point-cloud export")
    p_rec.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p_rec.add_argument("--timings", action="store_true",
                       help="write real wall-clock times into the trace CSV "
                            "(makes repeated runs differ byte-wise)")
    p_rec.set_defaults(func=cmd_reconstruct)

    p_eval = sub.add_parser("evaluate", help="depth-map MAE/RMSE against a reference")
    p_eval.add_argument("pred", help="predicted volume or depth-map base path")
    p_eval.add_argument("truth", help="reference depth-map base path")
    p_eval.add_argument("--threshold", type=float, default=0.05,
                        help="relative validity threshold when pred is a volume")
    p_eval.add_argument("--upsample", action="store_true",
                        help="bilinearly resize pred to the truth resolution")
    p_eval.set_defaults(func=cmd_evaluate)

    p_bench = sub.add_parser("bench", help="reconstruct while timing every iteration")
    p_bench.add_argument("bundle")
    p_bench.add_argument("--bbox", type=float, nargs=6, required=True,
                         metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    p_bench.add_argument("--config")
    p_bench.add_argument("--out", help="bench report JSON path (default: stdout)")
    p_bench.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
