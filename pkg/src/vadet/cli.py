"""Command-line pipeline: simulate, aggregate, sweep, build the table, evaluate.

Exit codes: 0 on success, 2 when an input file violates its schema,
3 when an aggregation needs more history than a sequence provides.

Streaming commands (``aggregate``, ``vadet``) clamp the requested depth
to the frames buffered so far, so a sequence produces output from its
very first frame while the window warms up.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .aggregation import VadetConfig, build_vadet_input
from .errors import InsufficientHistoryError, SchemaError, VadetError
from .eta import BinEdges, build_eta_table, run_sweep
from .evaluation import breakdown_report
from .frames import FrameBuffer, LidarFrame, fixed_aggregate
from .geometry import relative_pose, transform_detection
from .simulator import make_aggregation_detector, mock_detect, simulate_sequence
from . import io as vio


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _frame_range(text: str) -> tuple[int, int]:
    """Parse 'LO..HI' (inclusive) or a single count."""
    if ".." in text:
        lo_text, hi_text = text.split("..", 1)
        lo, hi = int(lo_text), int(hi_text)
    else:
        lo = hi = int(text)
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid frame range {text!r}")
    return lo, hi


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override the random seed")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads for the crop kernels")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    import numba

    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load_sequence_frames(seq_dir):
    manifest, frames = vio.read_sequence(seq_dir)
    return manifest, frames


def _streaming_buffer(n_max: int, frame_rate: float) -> FrameBuffer:
    return FrameBuffer(n_max=n_max, frame_rate=frame_rate)


def _cmd_simulate(args) -> int:
    spec = vio.read_scenario(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    seq = simulate_sequence(spec)
    out = Path(args.out)
    vio.write_sequence(seq.frames, out, out.name, spec.frame_rate)
    vio.write_detections(seq.ground_truth, out / "ground_truth.json")
    total = sum(len(f.cloud) for f in seq.frames)
    _say(args, f"wrote {len(seq.frames)} frames ({total} points) and ground truth to {out}")
    return 0


def _cmd_aggregate(args) -> int:
    manifest, frames = _load_sequence_frames(args.seq)
    if args.frames > len(frames):
        raise InsufficientHistoryError(
            f"requested {args.frames}-frame aggregation but the sequence "
            f"has only {len(frames)} frames"
        )
    buf = _streaming_buffer(args.frames, manifest.frame_rate_hz)
    out_frames = []
    for frame in frames:
        buf.push(frame)
        cloud = fixed_aggregate(buf, min(args.frames, len(buf)))
        out_frames.append(
            LidarFrame(cloud, frame.pose, frame.timestamp_us, frame.frame_index)
        )
    vio.write_sequence(
        out_frames, args.out, f"{manifest.sequence_id}_agg{args.frames}",
        manifest.frame_rate_hz,
    )
    _say(args, f"wrote {len(out_frames)} aggregated frames to {args.out}")
    return 0


def _cmd_vadet(args) -> int:
    manifest, frames = _load_sequence_frames(args.seq)
    detections = vio.read_detections(args.detections)
    if detections and len(detections) != len(frames):
        raise SchemaError(
            "detections",
            f"expected one array per frame ({len(frames)}), got {len(detections)}",
        )
    table = vio.read_eta_table(args.eta)
    cfg = VadetConfig(
        sigma=args.sigma,
        background_frames=args.bg_frames,
        frame_rate=manifest.frame_rate_hz,
        n_min=table.n_min,
        n_max=table.n_max,
    )
    buf = _streaming_buffer(max(table.n_max, cfg.background_frames), cfg.frame_rate)
    out_frames = []
    for tau, frame in enumerate(frames):
        buf.push(frame)
        if tau == 0 or not detections:
            prev = []
        else:
            shift = relative_pose(frame.pose, frames[tau - 1].pose)
            prev = [transform_detection(d, shift) for d in detections[tau - 1]]
        cloud = build_vadet_input(buf, prev, table, cfg, clamp_history=True)
        out_frames.append(
            LidarFrame(cloud, frame.pose, frame.timestamp_us, frame.frame_index)
        )
    vio.write_sequence(
        out_frames, args.out, f"{manifest.sequence_id}_vadet", cfg.frame_rate
    )
    _say(args, f"wrote {len(out_frames)} variable-aggregated frames to {args.out}")
    return 0


def _cmd_mock_detect(args) -> int:
    manifest, _frames = vio.read_sequence(args.seq)
    gt = vio.read_detections(args.gt)
    if len(gt) != len(manifest.frame_files):
        raise SchemaError(
            "ground_truth",
            f"expected one array per frame ({len(manifest.frame_files)}), got {len(gt)}",
        )
    noise = vio.read_noise_model(args.noise)
    seed = args.seed if args.seed is not None else 0
    root = np.random.SeedSequence(seed)
    detections = [
        mock_detect(frame_gts, noise, np.random.default_rng(sub))
        for frame_gts, sub in zip(gt, root.spawn(len(gt)))
    ]
    vio.write_detections(detections, args.out)
    total = sum(len(d) for d in detections)
    _say(args, f"wrote {total} detections over {len(detections)} frames to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    manifest, _frames = vio.read_sequence(args.seq)
    gt = vio.read_detections(args.gt)
    if len(gt) != len(manifest.frame_files):
        raise SchemaError(
            "ground_truth",
            f"expected one array per frame ({len(manifest.frame_files)}), got {len(gt)}",
        )
    if args.frames[1] > len(gt):
        raise InsufficientHistoryError(
            f"sweep up to {args.frames[1]} frames requested but the sequence "
            f"has only {len(gt)} frames"
        )
    noise = vio.read_noise_model(args.noise)
    edges = vio.read_bin_edges(args.edges) if args.edges else BinEdges()
    seed = args.seed if args.seed is not None else 0
    detector = make_aggregation_detector(
        [gt], noise, edges, manifest.frame_rate_hz, seed
    )
    sweep = run_sweep([gt], detector, edges, args.frames, iou_threshold=args.iou)
    vio.write_sweep_result(sweep, args.out)
    if args.csv:
        vio.write_sweep_csv(sweep, args.csv)
    populated = int((sweep.sample_counts > 0).sum())
    _say(args, f"swept frames {args.frames[0]}..{args.frames[1]} over "
               f"{populated} populated bins; wrote {args.out}")
    return 0


def _cmd_build_eta(args) -> int:
    sweep = vio.read_sweep_result(args.sweep)
    lo = int(sweep.frame_counts.min())
    hi = int(sweep.frame_counts.max())
    cfg = VadetConfig(n_min=min(3, lo), n_max=max(16, hi))
    table = build_eta_table(sweep, cfg)
    vio.write_eta_table(table, args.out)
    _say(args, f"wrote lookup table ({table.frames.shape[0]}x{table.frames.shape[1]} bins) to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    detections = vio.read_detections(args.detections)
    gts = vio.read_detections(args.gt)
    if len(detections) != len(gts):
        raise SchemaError(
            "detections",
            f"{len(detections)} detection frames vs {len(gts)} ground-truth frames",
        )
    kinds = tuple(k for k in args.breakdown.split(",") if k) if args.breakdown else ()
    rows = breakdown_report(detections, gts, iou_threshold=args.iou, kinds=kinds)
    vio.write_breakdown_csv(rows, args.out)
    overall = rows[0]
    _say(
        args,
        f"overall AP {overall.ap_corrected:.4f} over {overall.n_gt} ground truths; "
        f"report written to {args.out}",
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vadet",
        description="Variable multi-frame LiDAR aggregation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic sequence from a scenario file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("aggregate", help="fixed multi-frame aggregation of a sequence")
    p.add_argument("--seq", required=True)
    p.add_argument("--frames", type=_positive_int, required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("vadet", help="per-object variable aggregation of a sequence")
    p.add_argument("--seq", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--eta", required=True)
    p.add_argument("--sigma", type=float, default=1.1)
    p.add_argument("--bg-frames", type=_positive_int, default=3)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_vadet)

    p = sub.add_parser("mock-detect", help="perturbed ground truth as a stand-in detector")
    p.add_argument("--seq", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_mock_detect)

    p = sub.add_parser("sweep", help="AP per object bin across aggregation depths")
    p.add_argument("--seq", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--frames", type=_frame_range, default=(3, 16),
                   help="inclusive range, e.g. 3..16")
    p.add_argument("--edges", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="also write per-bin AP rows as CSV")
    p.add_argument("--iou", type=float, default=0.7)
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("build-eta", help="argmax lookup table from a sweep result")
    p.add_argument("--sweep", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_build_eta)

    p = sub.add_parser("eval", help="AP and subset metrics for a detections file")
    p.add_argument("--detections", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--breakdown", default=None,
                   help="comma-separated subset kinds: speed,density,cross")
    p.add_argument("--iou", type=float, default=0.7)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InsufficientHistoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except VadetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
