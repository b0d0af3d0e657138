"""``lyrictrack`` command line: features, infer, track, eval, synth, rf.

Exit codes: 0 success, 1 runtime failure, 2 usage or file error.
"""
from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path

from . import features as feat
from .errors import AudioFormatError, FormatError, LyricTrackError, MissingTensor, ShapeError, SpecError
from .evaluation import load_annotations, metrics, transfer
from .network import QUOTED_RF_FRAMES, NetworkSpec, infer, input_context, load_weights, receptive_field
from .oltw import TrackerConfig, context_seconds, read_events, write_events
from .pipeline import audio_rows, replay_track
from .posteriogram import load_posteriogram, save_posteriogram
from .synth import WarpSpec, synth_warp

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class FileProblem(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileProblem(f"no such file: {path}")
    return p


@contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _spec(name: str) -> NetworkSpec:
    if name != "builtin:table1":
        raise FileProblem(f"unknown network spec {name!r} (available: builtin:table1)")
    return NetworkSpec.table1()


def cmd_features(args) -> int:
    audio = feat.read_wav(_existing(args.input))
    config = feat.FeatureConfig.for_variant(args.variant)
    if audio.sample_rate_hz != config.sample_rate_hz:
        audio = feat.resample(audio, config.sample_rate_hz)
    feat.save_features(feat.extract(audio, config), args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    spec = _spec(args.spec)
    features = feat.load_features(_existing(args.feat))
    weights = load_weights(_existing(args.weights), spec)
    save_posteriogram(infer(features, weights, spec), args.out)
    return EXIT_OK


def cmd_track(args) -> int:
    reference = load_posteriogram(_existing(args.ref))
    config = TrackerConfig(window_frames=args.window, monotonic=args.monotonic, normalize=args.normalize)
    if args.target is not None:
        target = load_posteriogram(_existing(args.target))
    else:
        if args.weights is None:
            raise FileProblem("--target-wav needs --weights")
        spec = _spec(args.spec)
        weights = load_weights(_existing(args.weights), spec)
        target = audio_rows(feat.read_wav(_existing(args.target_wav)), weights, spec)
    print(f"tracking with a window of {args.window} frames = "
          f"{context_seconds(args.window, reference.frame_period_ms):g} s of reference context",
          file=sys.stderr)
    events = replay_track(reference, target, config)
    with _output(args.out) as fh:
        write_events(events, fh, args.format)
    return EXIT_OK


def cmd_eval(args) -> int:
    events = read_events(_existing(args.events))
    ref_annot = load_annotations(_existing(args.ref_annot))
    truth = load_annotations(_existing(args.target_annot))
    report = metrics(transfer(ref_annot, events), truth)
    with _output(args.out) as fh:
        fh.write(report.to_json() + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    reference = load_posteriogram(_existing(args.ref))
    warp = WarpSpec.load(_existing(args.warp), noise_level=args.noise)
    target, truth = synth_warp(reference, warp, args.seed)
    save_posteriogram(target, args.out)
    if args.truth:
        doc = json.loads(truth.to_json())
        doc.update(frame_period_ms=reference.frame_period_ms, target_frames=len(target), seed=args.seed)
        Path(args.truth).write_text(json.dumps(doc) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_rf(args) -> int:
    spec = _spec(args.spec)
    rf, stride = receptive_field(spec)
    lo, hi = input_context(spec)
    print(f"rf_frames={rf}")
    print(f"stride={stride}")
    print(f"latency_frames={spec.latency_frames}")
    print(f"output_period_ms={spec.output_period_ms:g}")
    print(f"note: {QUOTED_RF_FRAMES} frames is the commonly quoted RF for this layer table; the "
          f"kernel/stride recursion gives {rf} (input context {lo}..{hi}). Output row m is anchored "
          f"at input frame {stride}*m+{spec.anchor_offset} so that its lookahead is "
          f"{spec.latency_frames} frames ({spec.latency_frames * spec.input_period_ms:g} ms).")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lyrictrack", description="Real-time audio-to-lyrics tracking.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract a feature matrix from a WAV file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=feat.VARIANTS, default="model80")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("infer", help="compute a posteriogram from model80 features")
    p.add_argument("--feat", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spec", default="builtin:table1")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("track", help="align a target against a reference posteriogram")
    p.add_argument("--ref", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--target")
    source.add_argument("--target-wav")
    p.add_argument("--weights")
    p.add_argument("--spec", default="builtin:table1")
    p.add_argument("--window", type=int, default=8000)
    p.add_argument("--monotonic", type=_on_off, default=True)
    p.add_argument("--normalize", type=_on_off, default=False)
    p.add_argument("--format", choices=("tsv", "jsonl"), default="tsv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score transferred annotations")
    p.add_argument("--events", required=True)
    p.add_argument("--ref-annot", required=True)
    p.add_argument("--target-annot", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="warp a reference posteriogram into a synthetic target")
    p.add_argument("--ref", required=True)
    p.add_argument("--warp", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rf", help="print receptive field, stride and latency")
    p.add_argument("--spec", default="builtin:table1")
    p.set_defaults(func=cmd_rf)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "window", 3) < 3:
        print("lyrictrack: error: --window must be >= 3", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (FileProblem, OSError, FormatError, AudioFormatError, MissingTensor, ShapeError, SpecError) as exc:
        print(f"lyrictrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LyricTrackError, ValueError, RuntimeError) as exc:
        print(f"lyrictrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
