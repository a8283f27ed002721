"""Command-line interface: synth, train, detect, eval, render, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dsp, metrics, render, synth
from .config import ConfigError, load_config
from .events import Annotation, EventDetection, group_by_file
from .fileio import DataError, atomic_write, read_jsonl, read_wav, wav_duration, write_jsonl, write_wav
from .pipeline import DetectionModel, TrainingDiverged, detect, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
EVENT_FIELDS = ("file", "class", "onset", "offset")

log = logging.getLogger("eventness")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args):
    return load_config(args.config, seed=args.seed)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def build_banks(cfg):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xBA4C]))
    params = cfg.spectrogram()
    if cfg.event_dir:
        events = synth.load_event_bank(cfg.event_dir, params)
    else:
        events = synth.tone_burst_bank(cfg.class_specs(), rng, cfg.sample_rate, cfg.events_per_class, params)
    if cfg.background_dir:
        backgrounds = synth.load_background_bank(cfg.background_dir)
    else:
        backgrounds = synth.noise_background_bank(
            cfg.background_count, cfg.background_seconds, rng, cfg.sample_rate, cfg.background_color
        )
    return events, backgrounds


def cmd_synth(args):
    cfg = _config(args)
    n = cfg.n_scenes if args.n is None else args.n
    if n < 1:
        raise UsageError("--n must be at least 1")
    events, backgrounds = build_banks(cfg)
    scenes, manifest = synth.synthesize_dataset(n, cfg.scene_spec(), events, backgrounds, seed=cfg.seed)
    out = Path(args.out)
    for i, scene in enumerate(scenes):
        write_wav(out / synth.scene_filename(i), scene.waveform)
    write_jsonl(out / "manifest.jsonl", manifest)
    poly = sum(s.polyphonic for s in scenes)
    clipped = sum(s.provenance["clipped_samples"] for s in scenes)
    print(f"wrote {n} scenes, {len(manifest)} events to {out}")
    print(f"polyphonic: {poly}/{n} = {poly / n:.3f}")
    if clipped:
        print(f"clipped samples: {clipped}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / detect
# ---------------------------------------------------------------------------


def load_manifest_dataset(manifest):
    rows = read_jsonl(manifest, EVENT_FIELDS)
    base = Path(manifest).parent
    dataset = []
    try:
        grouped = group_by_file(rows, Annotation.from_row)
    except ValueError as exc:
        raise DataError(f"{manifest}: {exc}") from exc
    for name, anns in grouped.items():
        dataset.append((read_wav(base / name), anns))
    return dataset


def cmd_train(args):
    cfg = _config(args)
    if args.iterations is not None:
        cfg.iterations = args.iterations
    dataset = load_manifest_dataset(args.manifest)
    classes = sorted({a.class_label for _, anns in dataset for a in anns})
    model = cfg.new_model(classes)

    def progress(it, parts):
        if it % 100 == 0 or it == cfg.iterations - 1:
            print(f"iter {it:5d}  loss {parts['loss']:.4f}", flush=True)

    model, history = train(dataset, cfg.train_config(), model=model, progress=progress)
    model.save(args.out)
    if args.loss_log:
        write_jsonl(args.loss_log, history)
    print(f"saved checkpoint to {args.out} (classes: {', '.join(classes)})")
    return EXIT_OK


def cmd_detect(args):
    model = DetectionModel.load(args.checkpoint)
    if args.score_thresh is not None:
        from dataclasses import replace

        model.roi = replace(model.roi, score_thresh=args.score_thresh)
    rows = []
    for path in args.wav:
        path = Path(path)
        name = str(path.relative_to(args.relative_to)) if args.relative_to else path.name
        for event in detect(model, read_wav(path)):
            rows.append(event.to_row(name))
    if args.out:
        write_jsonl(args.out, rows)
    else:
        for row in rows:
            print(json.dumps(row))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def clip_duration(name, ref_path, events, fallback):
    """Clip length: explicit value, else the WAV next to the reference file, else event extent."""
    if fallback is not None:
        return fallback
    wav = Path(ref_path).parent / name
    if wav.exists():
        return wav_duration(wav)
    end = max((e.offset for e in events), default=1.0)
    return float(math.ceil(end))


def evaluate(ref_path, sys_path, cfg, duration=None):
    ref_rows = read_jsonl(ref_path, EVENT_FIELDS)
    sys_rows = read_jsonl(sys_path, EVENT_FIELDS)
    try:
        ref = group_by_file(ref_rows, Annotation.from_row)
        est = group_by_file(sys_rows, EventDetection.from_row)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ref_classes = {a.class_label for anns in ref.values() for a in anns}
    missing = sorted({e.class_label for dets in est.values() for e in dets} - ref_classes)
    for c in missing:
        log.warning("class %r appears only in the system output; counted as false positives", c)
    clips = []
    for name in list(ref) + [n for n in est if n not in ref]:
        r, s = ref.get(name, []), est.get(name, [])
        clips.append((r, s, clip_duration(name, ref_path, r + s, duration)))
    return metrics.score_report(clips, cfg.segment_length, cfg.match_config())


def cmd_eval(args):
    cfg = _config(args)
    report = evaluate(args.ref, args.sys, cfg, args.duration)
    print(report.format())
    if args.json:
        with atomic_write(args.json) as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return EXIT_OK


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def _events_for(path, wav_name, factory):
    if not path:
        return []
    rows = read_jsonl(path, EVENT_FIELDS)
    return [factory(r) for r in rows if Path(str(r["file"])).name == wav_name]


def cmd_render(args):
    cfg = _config(args)
    w = read_wav(args.wav)
    params = cfg.spectrogram()
    image = dsp.spectrogram_image(w, params)
    name = Path(args.wav).name
    refs = _events_for(args.annotations, name, Annotation.from_row)
    dets = _events_for(args.detections, name, EventDetection.from_row)
    rgb = render.render(image.values, image.frame_to_seconds, refs, dets)
    with atomic_write(args.out, "wb") as fh:
        fh.write(render.ppm_bytes(rgb))
    print(f"wrote {rgb.shape[1]}x{rgb.shape[0]} image to {args.out}")
    return EXIT_OK


def cmd_bench(args):
    from . import bench

    bench.main(["--repeat", str(args.repeat)] + (["--train-steps", str(args.train_steps)] if args.train_steps else []))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="eventness", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("synth", help="generate synthetic scenes and a manifest")
    common(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--n", type=int, help="number of scenes (default: n_scenes from config)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector from a manifest")
    common(p)
    p.add_argument("manifest")
    p.add_argument("--out", required=True, metavar="CHECKPOINT")
    p.add_argument("--iterations", type=int)
    p.add_argument("--loss-log", metavar="PATH", help="write per-iteration losses as JSON Lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="detect events in WAV files")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("wav", nargs="+")
    p.add_argument("--out", metavar="PATH", help="detections JSON Lines (default: stdout)")
    p.add_argument("--relative-to", metavar="DIR", help="record file names relative to DIR")
    p.add_argument("--score-thresh", type=float)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against references")
    common(p)
    p.add_argument("ref")
    p.add_argument("sys")
    p.add_argument("--duration", type=float, help="clip duration in seconds for every file")
    p.add_argument("--json", metavar="PATH", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a spectrogram with box overlays as PPM")
    common(p)
    p.add_argument("wav")
    p.add_argument("--annotations", metavar="JSONL")
    p.add_argument("--detections", metavar="JSONL")
    p.add_argument("--out", required=True, metavar="IMAGE.ppm")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench", help="compare numba and numpy kernels")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--train-steps", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"eventness: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"eventness: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"eventness: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
