"""Command-line interface.

Subcommands: ``mask`` exports a projected or exact viewport mask,
``bank`` builds and caches a precomputed mask bank, ``evaluate`` scores
one session trace, ``study`` runs batch experiments from a manifest and
emits aggregate tables, and ``synth-trace`` generates a seeded random
walk.  Angles are degrees, segment lengths are milliseconds.  Exit
codes: 2 for usage errors, 3 for malformed data, 4 for I/O failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .geometry import (
    FieldOfView,
    Resolution,
    SphericalPoint,
    equivalent_pixels_viewport,
)
from .grade import load_footprint_json, variant_layout_26
from .mask import (
    DEFAULT_SAMPLES_PER_SIDE,
    _atomic_write_bytes,
    bank_manifest,
    build_mask_bank,
    exact_mask,
    load_mask_bank,
    project_viewport,
    save_mask_bank,
    write_mask_npz,
    write_mask_pgm,
)
from .pooling import (
    DEFAULT_T_Q,
    NORMALIZATION_ANALYTIC,
    NORMALIZATION_MASK_AREA,
    write_frame_csv,
)
from .session import (
    DEFAULT_FPS,
    METHOD_AVAQM,
    METHOD_VAQM,
    SessionConfig,
    approximation_error_study,
    evaluate_session,
    load_batch_manifest,
    parse_trace,
    session_report,
    synthetic_trace,
    write_trace_csv,
)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_IO = 4

DEFAULT_RESOLUTION = "3840x1920"
DEFAULT_FOV = "100,85"
DEFAULT_STUDY_GRIDS = "3x6,5x10,10x20,20x40"


class UsageError(ValueError):
    """Flag combinations argparse cannot catch on its own."""


def _parse_pair(text: str, separator: str, what: str) -> tuple[float, float]:
    parts = text.split(separator)
    if len(parts) != 2:
        raise UsageError(f"expected {what} as A{separator}B, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"expected numeric {what}, got {text!r}") from None


def _parse_resolution(text: str) -> Resolution:
    w, h = _parse_pair(text, "x", "resolution")
    if w != int(w) or h != int(h):
        raise UsageError(f"resolution must be integral, got {text!r}")
    return Resolution(int(w), int(h))


def _parse_grid(text: str) -> tuple[int, int]:
    r, c = _parse_pair(text, "x", "grid")
    if r != int(r) or c != int(c) or r < 1 or c < 1:
        raise UsageError(f"grid must be positive integers RxC, got {text!r}")
    return int(r), int(c)


def _parse_pog(text: str) -> SphericalPoint:
    theta, phi = _parse_pair(text, ",", "PoG")
    return SphericalPoint(theta, phi)


def _parse_fov(text: str) -> FieldOfView:
    theta, phi = _parse_pair(text, ",", "FoV")
    return FieldOfView(theta, phi)


def _footprint_from_flag(flag: str):
    if flag in ("area-only", "area+neighbors"):
        return flag
    return load_footprint_json(flag)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fov", default=DEFAULT_FOV, help="horizontal,vertical field of view in degrees")
    parser.add_argument("--resolution", default=DEFAULT_RESOLUTION, help="frame size as WIDTHxHEIGHT pixels")
    parser.add_argument(
        "--samples",
        type=int,
        default=DEFAULT_SAMPLES_PER_SIDE,
        help="boundary samples per viewport side",
    )


def _add_session_flags(parser: argparse.ArgumentParser) -> None:
    _add_common_flags(parser)
    parser.add_argument("--segment-ms", type=float, default=500.0, help="segment length in milliseconds")
    parser.add_argument("--fps", type=float, default=DEFAULT_FPS, help="trace frame rate in frames per second")
    parser.add_argument(
        "--convention",
        default="y-up",
        choices=("y-up", "z-up"),
        help="axis convention for quaternion traces",
    )
    parser.add_argument(
        "--method",
        default=METHOD_VAQM,
        choices=(METHOD_VAQM, METHOD_AVAQM),
        help="project the mask per frame (vaqm) or reuse the nearest precomputed mask (avaqm)",
    )
    parser.add_argument("--grid", help="bank grid as ROWSxCOLS (avaqm)")
    parser.add_argument("--bank", help="directory caching the bank on disk (avaqm)")
    parser.add_argument(
        "--footprint",
        default="area+neighbors",
        help="HQ footprint: area-only, area+neighbors, or a JSON file path",
    )
    parser.add_argument("--t-q", type=float, default=DEFAULT_T_Q, help="quality threshold in [0,1]")
    parser.add_argument(
        "--normalization",
        default=NORMALIZATION_MASK_AREA,
        choices=(NORMALIZATION_MASK_AREA, NORMALIZATION_ANALYTIC),
        help="divide by the mask weight sum or by the closed-form viewport pixel count",
    )


def _session_config(args, res: Resolution, fov: FieldOfView) -> SessionConfig:
    grid = _parse_grid(args.grid) if args.grid else None
    if args.method == METHOD_AVAQM and grid is None:
        raise UsageError("--method avaqm requires --grid ROWSxCOLS")
    return SessionConfig(
        segment_ms=args.segment_ms,
        fov=fov,
        resolution=res,
        layout=variant_layout_26(res),
        hq_footprint=_footprint_from_flag(args.footprint),
        method=args.method,
        avaqm_grid=grid,
        t_q=args.t_q,
        normalization=args.normalization,
        samples_per_side=args.samples,
    )


def _cached_bank(directory: str, grid: tuple[int, int], fov: FieldOfView, res: Resolution, samples: int, force: bool = False):
    wanted = {
        "grid_rows": grid[0],
        "grid_cols": grid[1],
        "fov": [fov.theta_deg, fov.phi_deg],
        "resolution": [res.n_h, res.n_v],
        "samples_per_side": samples,
    }
    manifest_path = os.path.join(directory, "manifest.json")
    if not force and os.path.exists(manifest_path):
        bank = load_mask_bank(directory)
        current = bank_manifest(bank)
        if all(current[key] == value for key, value in wanted.items()):
            return bank, False
    bank = build_mask_bank(grid[0], grid[1], fov, res, samples)
    save_mask_bank(bank, directory)
    return bank, True


def cmd_mask(args) -> int:
    res = _parse_resolution(args.resolution)
    fov = _parse_fov(args.fov)
    pog = _parse_pog(args.pog)
    if args.exact:
        mask = exact_mask(pog, fov, res, args.center_sigma)
    else:
        mask = project_viewport(pog, fov, res, args.samples, args.center_sigma)
    closed_form = equivalent_pixels_viewport(res, fov)
    write_mask_pgm(mask, args.out)
    if args.npz:
        write_mask_npz(mask, args.npz)
    print(f"mask written to {args.out}")
    print(f"area (weight sum): {mask.area:.1f} equivalent pixels")
    print(
        f"closed-form viewport size: {closed_form:.1f} equivalent pixels "
        f"({100.0 * (mask.area - closed_form) / closed_form:+.3f}% raster deviation)"
    )
    return 0


def cmd_bank(args) -> int:
    res = _parse_resolution(args.resolution)
    fov = _parse_fov(args.fov)
    grid = _parse_grid(args.grid)
    bank, built = _cached_bank(args.out, grid, fov, res, args.samples, args.force)
    action = "built" if built else "up to date"
    print(f"bank {grid[0]}x{grid[1]} at {args.out}: {action} ({len(bank.masks)} masks)")
    return 0


def _load_trace(args, path: str):
    return parse_trace(path, fps=args.fps, convention=args.convention)


def cmd_evaluate(args) -> int:
    res = _parse_resolution(args.resolution)
    fov = _parse_fov(args.fov)
    config = _session_config(args, res, fov)
    trace = _load_trace(args, args.trace)
    bank = None
    if args.bank:
        if config.avaqm_grid is None:
            raise UsageError("--bank requires --grid ROWSxCOLS")
        bank, _ = _cached_bank(args.bank, config.avaqm_grid, fov, res, args.samples)
    timeline = evaluate_session(trace, config, bank)
    frame_csv = args.out_prefix + "_frames.csv"
    summary_json = args.out_prefix + "_summary.json"
    write_frame_csv(timeline.frames, frame_csv)
    report = session_report(timeline, config, trace, frame_csv=os.path.basename(frame_csv))
    _atomic_write_bytes(summary_json, (json.dumps(report, indent=2) + "\n").encode("ascii"))
    print(f"q_window = {timeline.q_window:.6f}")
    print(f"f_window = {timeline.f_window:.2f}% at t_q = {timeline.threshold}")
    print(f"wrote {frame_csv} and {summary_json}")
    return 0


def _manifest_trace(entry: dict, args):
    if "synthetic" in entry:
        spec = dict(entry["synthetic"])
        spec.setdefault("fps", args.fps)
        return synthetic_trace(**spec)
    return _load_trace(args, entry["trace"])


def _segment_list(entry: dict, default_csv: str) -> list[float]:
    raw = entry.get("segment_ms")
    if raw is None:
        return [float(s) for s in default_csv.split(",")]
    if isinstance(raw, (int, float)):
        return [float(raw)]
    return [float(s) for s in raw]


def cmd_study(args) -> int:
    res = _parse_resolution(args.resolution)
    fov = _parse_fov(args.fov)
    entries = load_batch_manifest(args.manifest)
    base_config = _session_config(args, res, fov)
    os.makedirs(args.out, exist_ok=True)

    traces = [_manifest_trace(entry, args) for entry in entries]
    contents = [str(entry.get("content", f"entry{i}")) for i, entry in enumerate(entries)]
    segments = [_segment_list(entry, args.segments) for entry in entries]

    jobs = []
    for trace, content, segment_list in zip(traces, contents, segments):
        for segment_ms in segment_list:
            config = replace(base_config, segment_ms=segment_ms)
            jobs.append((content, segment_ms, trace, config))
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        timelines = list(pool.map(lambda job: evaluate_session(job[2], job[3]), jobs))

    by_key: dict[tuple[str, float], list] = {}
    for (content, segment_ms, _, _), timeline in zip(jobs, timelines):
        by_key.setdefault((content, segment_ms), []).append(timeline)
    lines = ["content,segment_ms,n_sessions,q_window_mean,f_window_mean"]
    for content, segment_ms in sorted(by_key):
        group = by_key[(content, segment_ms)]
        q = sum(t.q_window for t in group) / len(group)
        f = sum(t.f_window for t in group) / len(group)
        lines.append(f"{content},{segment_ms:g},{len(group)},{q:.6f},{f:.4f}")
    segment_table = os.path.join(args.out, "segment_table.csv")
    _atomic_write_bytes(segment_table, ("\n".join(lines) + "\n").encode("ascii"))
    written = [segment_table]

    if args.grids:
        grids = [_parse_grid(g) for g in args.grids.split(",")]
        reports = approximation_error_study(traces, base_config, grids)
        lines = ["grid_rows,grid_cols,mean_relative_error_percent,excluded_frames"]
        for report in reports:
            lines.append(
                f"{report.grid_rows},{report.grid_cols},"
                f"{report.mean_relative_error:.6f},{report.excluded_frames}"
            )
        error_table = os.path.join(args.out, "error_table.csv")
        _atomic_write_bytes(error_table, ("\n".join(lines) + "\n").encode("ascii"))
        written.append(error_table)
    print("wrote " + " and ".join(written))
    return 0


def cmd_synth_trace(args) -> int:
    trace = synthetic_trace(
        duration_s=args.duration_s,
        fps=args.fps,
        speed_deg_per_s=args.speed,
        dwell_probability=args.dwell,
        seed=args.seed,
        turn_sigma_deg=args.turn_sigma,
    )
    write_trace_csv(trace, args.out)
    print(f"wrote {trace.n_frames} frames to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vq360",
        description="Viewport quality of 360 video sessions on equirectangular frames.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="export a viewport mask raster")
    _add_common_flags(p)
    p.add_argument("--pog", required=True, help="point of gaze as theta,phi in degrees")
    p.add_argument("--exact", action="store_true", help="use the per-pixel membership oracle")
    p.add_argument("--center-sigma", type=float, help="optional Gaussian center weighting sigma in degrees")
    p.add_argument("--out", required=True, help="output PGM path")
    p.add_argument("--npz", help="also write a lossless NPZ raster")
    p.set_defaults(handler=cmd_mask)

    p = sub.add_parser("bank", help="build or refresh a mask bank directory")
    _add_common_flags(p)
    p.add_argument("--grid", required=True, help="bank grid as ROWSxCOLS")
    p.add_argument("--out", required=True, help="bank directory")
    p.add_argument("--force", action="store_true", help="rebuild even if the cached bank matches")
    p.set_defaults(handler=cmd_bank)

    p = sub.add_parser("evaluate", help="score one head-movement trace")
    _add_session_flags(p)
    p.add_argument("--trace", required=True, help="trace CSV (canonical or quaternion header)")
    p.add_argument("--out-prefix", required=True, help="prefix for _frames.csv and _summary.json")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("study", help="batch sessions and aggregate tables from a manifest")
    _add_session_flags(p)
    p.add_argument("--manifest", required=True, help="JSON list of {trace|synthetic, content, segment_ms}")
    p.add_argument("--out", required=True, help="output directory for CSV tables")
    p.add_argument(
        "--segments",
        default="500,2000,6000",
        help="segment lengths in ms for entries that do not specify their own",
    )
    p.add_argument(
        "--grids",
        default=DEFAULT_STUDY_GRIDS,
        help="bank grids for the error table, e.g. 3x6,5x10 (empty string to skip)",
    )
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads")
    p.set_defaults(handler=cmd_study)

    p = sub.add_parser("synth-trace", help="generate a seeded random-walk trace CSV")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--duration-s", type=float, default=60.0, help="duration in seconds")
    p.add_argument("--fps", type=float, default=DEFAULT_FPS, help="frames per second")
    p.add_argument("--speed", type=float, default=45.0, help="angular speed in degrees per second")
    p.add_argument("--dwell", type=float, default=0.2, help="per-frame probability of not moving")
    p.add_argument("--turn-sigma", type=float, default=20.0, help="heading diffusion in degrees per step")
    p.add_argument("--out", required=True, help="output trace CSV")
    p.set_defaults(handler=cmd_synth_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
