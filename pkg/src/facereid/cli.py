"""Pipeline entry point: fixture synthesis, tracking, filtering, evaluation.

Every subcommand is deterministic under fixed seeds, writes a config echo
next to its primary output for reproducibility, and exits 0 on success,
1 on validation errors, 2 on I/O or file-format errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import mining, protocols, synth, tracker
from .store import StoreFormatError, ValidationError, load_store, save_store


class CliParser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors (exit 1)."""

    def error(self, message):
        raise ValidationError(message)


def _echo_config(args: argparse.Namespace, primary_output: Path) -> None:
    params = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in ("func", "command")
    }
    echo = {"command": getattr(args, "command", "?"), "params": params}
    path = Path(str(primary_output) + ".config.json")
    path.write_text(json.dumps(echo, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_json(payload, path: Path) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _parse_k_values(text: str) -> list[int]:
    try:
        values = sorted({int(v) for v in text.split(",") if v.strip()})
    except ValueError as exc:
        raise ValidationError(f"bad --k-values {text!r}") from exc
    if not values or values[0] < 1:
        raise ValidationError("--k-values must be positive integers")
    return values


# ---------------------------------------------------------------- synth


def cmd_synth_corpus(args) -> int:
    dets = synth.synth_detection_corpus(args.videos, args.frames_per_video, args.count, args.seed)
    tracker.write_detections(dets, args.out)
    _echo_config(args, args.out)
    print(f"wrote {len(dets)} detections to {args.out}")
    return 0


def cmd_synth_stream(args) -> int:
    dets = synth.synth_tracking_stream(
        args.videos, args.frames, args.objects, args.seed, dip_rate=args.dip_rate
    )
    tracker.write_detections(dets, args.out)
    _echo_config(args, args.out)
    print(f"wrote {len(dets)} detections to {args.out}")
    return 0


def cmd_synth_scenario(args) -> int:
    dets = synth.SCENARIOS[args.name]()
    tracker.write_detections(dets, args.out)
    _echo_config(args, args.out)
    print(f"wrote scenario {args.name!r} ({len(dets)} detections) to {args.out}")
    return 0


def cmd_synth_embeddings(args) -> int:
    if args.mode == "track":
        store = synth.synth_track_store(
            identities=args.identities,
            tracks_per_identity=args.tracks,
            frames_per_track=args.frames,
            dim=args.dim,
            seed=args.seed,
            source=args.source,
            track_spread=args.track_spread,
            image_noise=args.image_noise,
        )
    else:
        sizes = synth.parse_portrait_sizes(args.portrait_sizes)
        store = synth.synth_portrait_store(
            sizes=sizes,
            dim=args.dim,
            seed=args.seed,
            source=args.source,
            image_noise=args.image_noise,
        )
    save_store(store, args.out)
    _echo_config(args, args.out)
    print(f"wrote {len(store)} embeddings (d={store.dimension}) to {args.out}")
    return 0


# ---------------------------------------------------------------- track


def cmd_track(args) -> int:
    config = tracker.TrackerConfig(
        tau_high=args.tau_high,
        tau_low=args.tau_low,
        iou_stage1=args.iou_stage1,
        iou_stage2=args.iou_stage2,
        min_hits=args.min_hits,
        max_lost=args.max_lost,
    )
    dets = tracker.read_detections(args.detections)
    rows = tracker.run_tracker(dets, config)
    tracker.write_track_rows(rows, args.out)
    _echo_config(args, args.out)
    n_tracks = len({(r.video_id, r.track_id) for r in rows})
    print(f"associated {len(rows)} detections into {n_tracks} tracks -> {args.out}")
    return 0


# ---------------------------------------------------------------- filter


def _parse_source_input(text: str) -> tuple[str, Path]:
    if "=" in text:
        source, path = text.split("=", 1)
        return source, Path(path)
    path = Path(text)
    return path.stem, path


def _parse_fraction_override(text: str) -> tuple[str, tuple[float, float]]:
    try:
        source, spec = text.split("=", 1)
        keep, sub = spec.split(":")
        return source, (float(keep), float(sub))
    except ValueError as exc:
        raise ValidationError(f"bad --per-source {text!r}; want SOURCE=KEEP:SUB") from exc


def cmd_filter(args) -> int:
    raw_by_source: dict[str, list[mining.MinedRecord]] = {}
    for item in args.input:
        source, path = _parse_source_input(item)
        raw_by_source.setdefault(source, []).extend(mining.load_mined_records(path, source))
    overrides = dict(_parse_fraction_override(item) for item in args.per_source)
    default = (args.keep_fraction, args.subsample_fraction)

    filtered_by_source = mining.filter_by_source(raw_by_source, overrides, default, args.seed)
    stats = mining.corpus_stats(raw_by_source, filtered_by_source)

    retained = sorted(r.image_id for recs in filtered_by_source.values() for r in recs)
    Path(args.out_manifest).write_text(
        "".join(image_id + "\n" for image_id in retained), encoding="utf-8"
    )
    _write_json([vars(s).copy() for s in stats], Path(args.out_stats))
    _echo_config(args, Path(args.out_manifest))
    for s in stats:
        print(
            f"{s.source}: {s.raw_detections} raw -> {s.filtered_detections} kept "
            f"({s.videos} videos, {s.frames} frames)"
        )
    return 0


# ---------------------------------------------------------------- evaluation


def _format_reid_table(report: protocols.ProtocolReport, k_values) -> str:
    lines = [
        "open-set re-identification: class-averaged weighted k-NN accuracy",
        "counts: " + ", ".join(f"{k}={v}" for k, v in sorted(report.counts.items())),
        "",
        "k     " + "".join(f"{k:>10d}" for k in k_values),
        "mean  " + "".join(f"{report.per_k[k][0]:>10.4f}" for k in k_values),
        "std   " + "".join(f"{report.per_k[k][1]:>10.4f}" for k in k_values),
        "",
        f"chosen k = {report.chosen_k} (held-out selection split): "
        f"{report.accuracy_mean:.4f} +/- {report.accuracy_std:.4f}",
    ]
    return "\n".join(lines) + "\n"


def cmd_eval_reid(args) -> int:
    store = load_store(args.store)
    k_values = _parse_k_values(args.k_values)
    params = protocols.SplitParams(
        gallery_tracks=args.gallery_tracks,
        query_tracks=args.query_tracks,
        frames_per_track=args.frames_per_track,
    )
    report = protocols.run_reid_protocol(
        store,
        mode=args.mode,
        params=params,
        k_values=k_values,
        repetitions=args.repetitions,
        seed=args.seed,
    )
    payload = {
        "protocol": "reid",
        "mode": args.mode,
        "counts": report.counts,
        "k_values": k_values,
        "per_k": {str(k): list(report.per_k[k]) for k in k_values},
        "chosen_k": report.chosen_k,
        "accuracy_mean": report.accuracy_mean,
        "accuracy_std": report.accuracy_std,
        "repetitions": args.repetitions,
        "seed": args.seed,
    }
    out = Path(args.out)
    _write_json(payload, out)
    Path(str(out) + ".table.txt").write_text(
        _format_reid_table(report, k_values), encoding="utf-8"
    )
    _echo_config(args, out)
    print(
        f"re-ID on {report.counts.get('queries', 0)} queries / "
        f"{report.counts.get('gallery', 0)} gallery: k={report.chosen_k} "
        f"accuracy {report.accuracy_mean:.4f} +/- {report.accuracy_std:.4f}"
    )
    return 0


def cmd_eval_verify(args) -> int:
    store = load_store(args.store)
    report = protocols.run_verification_protocol(
        store,
        min_tracks=args.min_tracks,
        n_negative_sets=args.negative_sets,
        seed=args.seed,
    )
    payload = {
        "protocol": "verification",
        "counts": report.counts,
        "auc_mean": report.auc_mean,
        "auc_std": report.auc_std,
        "seed": args.seed,
    }
    out = Path(args.out)
    _write_json(payload, out)
    _echo_config(args, out)
    print(
        f"verification on {report.counts.get('positive_pairs', 0)} positive pairs: "
        f"AUC {report.auc_mean:.4f} +/- {report.auc_std:.4f}"
    )
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> CliParser:
    parser = CliParser(prog="facereid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth_p = sub.add_parser("synth", help="generate synthetic fixtures")
    synth_sub = synth_p.add_subparsers(dest="synth_kind", required=True)

    p = synth_sub.add_parser("corpus", help="random detection corpus with exact count")
    p.add_argument("--videos", type=int, default=205)
    p.add_argument("--frames-per-video", type=int, default=340)
    p.add_argument("--count", type=int, default=30000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth_corpus, command="synth corpus")

    p = synth_sub.add_parser("stream", help="moving-object detection streams")
    p.add_argument("--videos", type=int, default=4)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--dip-rate", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth_stream, command="synth stream")

    p = synth_sub.add_parser("scenario", help="scripted tracker scenarios")
    p.add_argument("--name", choices=sorted(synth.SCENARIOS), required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth_scenario, command="synth scenario")

    p = synth_sub.add_parser("embeddings", help="clustered embedding stores")
    p.add_argument("--mode", choices=["track", "portrait"], default="track")
    p.add_argument("--identities", type=int, default=9)
    p.add_argument("--tracks", type=int, default=42)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument(
        "--portrait-sizes",
        default="41x10,8x33,7x181,6x152",
        help="portrait mode: comma-separated IMAGESxIDENTITIES chunks",
    )
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--track-spread", type=float, default=0.35)
    p.add_argument("--image-noise", type=float, default=0.55)
    p.add_argument("--source", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth_embeddings, command="synth embeddings")

    p = sub.add_parser("track", help="associate detections into tracks")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tau-high", type=float, default=0.6)
    p.add_argument("--tau-low", type=float, default=0.1)
    p.add_argument("--iou-stage1", type=float, default=0.2)
    p.add_argument("--iou-stage2", type=float, default=0.5)
    p.add_argument("--min-hits", type=int, default=3)
    p.add_argument("--max-lost", type=int, default=30)
    p.set_defaults(func=cmd_track, command="track")

    p = sub.add_parser("filter", help="confidence-filter a mined corpus")
    p.add_argument(
        "--input",
        action="append",
        required=True,
        help="track/detection file, optionally SOURCE=PATH; repeatable",
    )
    p.add_argument("--keep-fraction", type=float, default=1.0)
    p.add_argument("--subsample-fraction", type=float, default=1.0)
    p.add_argument(
        "--per-source",
        action="append",
        default=[],
        help="override fractions per source: SOURCE=KEEP:SUB; repeatable",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-manifest", type=Path, required=True)
    p.add_argument("--out-stats", type=Path, required=True)
    p.set_defaults(func=cmd_filter, command="filter")

    p = sub.add_parser("eval-reid", help="open-set re-identification protocol")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--mode", choices=["track", "portrait"], default="track")
    p.add_argument("--gallery-tracks", type=int, default=35)
    p.add_argument("--query-tracks", type=int, default=7)
    p.add_argument("--frames-per-track", type=int, default=10)
    p.add_argument("--k-values", default="1,3,5,7,10,20,50")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval_reid, command="eval-reid")

    p = sub.add_parser("eval-verify", help="verification protocol (ROC-AUC)")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--min-tracks", type=int, default=None)
    p.add_argument("--negative-sets", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval_verify, command="eval-verify")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StoreFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
