"""Command-line entry point.

Machine-readable JSON goes to stdout, human summaries to stderr. Every
command that owns an output directory echoes its fully resolved
configuration there, and train/eval/cv/stream run directories become
immutable once the run completes (a run_complete.json marker is written;
reusing such a directory is a config error).

Exit codes: 0 success, 2 configuration, 3 data/format, 4 training,
5 checkpoint.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    LABELS,
    ClipRecord,
    SynthSpec,
    generate_synthetic,
    read_crop_records,
    read_manifest,
    resolve_feature_path,
    sample_keyframes,
    select_target_box,
    apply_crop,
    toy_extract,
    write_features,
    write_manifest,
    read_features,
    _atomic_write_bytes,
)
from .errors import ConfigError, DataError, StimseqError
from .evaluation import cross_validate, evaluate_records, make_folds
from .models import ModelConfig
from .streaming import (
    StreamConfig,
    StreamEngine,
    latency_report,
    latency_stats,
    parse_latency_report,
    stream_file,
    window_result_to_json,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

_CONFIG_SECTIONS = ("model", "train", "stream", "synth", "paths", "seed")
_PATH_KEYS = {"manifest", "checkpoint", "out_dir", "input", "frames_dir"}


def _load_run_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    unknown = set(doc) - set(_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    paths = doc.get("paths", {})
    bad_paths = set(paths) - _PATH_KEYS
    if bad_paths:
        raise ConfigError(f"unknown path keys: {sorted(bad_paths)}")
    return doc


def _merged(section, overrides):
    merged = dict(section)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _out_dir(args, run_config, required=True):
    out = args.out_dir or run_config.get("paths", {}).get("out_dir")
    if out is None:
        if required:
            raise ConfigError("no output directory: pass --out-dir or set paths.out_dir")
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_not_completed(out_dir):
    marker = out_dir / "run_complete.json"
    if marker.exists():
        raise ConfigError(
            f"{out_dir} holds a completed run (run_complete.json present); "
            "completed run directories are immutable, pick a fresh one"
        )


def _finish_run(out_dir, summary):
    _atomic_write_bytes(out_dir / "run_complete.json",
                        json.dumps(summary, sort_keys=True).encode())


def _echo_config(out_dir, resolved):
    _atomic_write_bytes(out_dir / "resolved_config.json",
                        (json.dumps(resolved, indent=2, sort_keys=True) + "\n").encode())


def _emit(doc):
    print(json.dumps(doc, sort_keys=True))


def _note(msg):
    print(msg, file=sys.stderr)


def _seed(args, run_config, default=0):
    if args.seed is not None:
        return args.seed
    return run_config.get("seed", default)


def _records_sorted(manifest_path):
    return sorted(read_manifest(manifest_path), key=lambda r: r.clip_id)


def _manifest_path(args, run_config):
    p = getattr(args, "manifest", None) or run_config.get("paths", {}).get("manifest")
    if p is None:
        raise ConfigError("no manifest: pass --manifest or set paths.manifest")
    return Path(p)


def _model_config(args, run_config, records, root):
    section = dict(run_config.get("model", {}))
    if args.model is not None:
        section["kind"] = args.model
    if getattr(args, "input_dim", None) is not None:
        section["input_dim"] = args.input_dim
    if "kind" not in section:
        raise ConfigError("no model kind: pass --model or set model.kind")
    if "input_dim" not in section:
        if not records:
            raise ConfigError("cannot infer input_dim from an empty manifest")
        section["input_dim"] = read_features(resolve_feature_path(records[0], root)).dim
    return ModelConfig.from_dict(section)


def _train_config(args, run_config, seed):
    section = _merged(run_config.get("train", {}), {
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "learning_rate", None),
    })
    section["seed"] = seed
    return TrainConfig.from_dict(section)


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    run_config = _load_run_config(args.config)
    out_dir = _out_dir(args, run_config)
    section = _merged(run_config.get("synth", {}), {
        "n_subjects": args.n_subjects,
        "clips_per_subject": args.clips_per_subject,
        "n_frames": args.frames,
        "dim": args.dim,
        "noise_sigma": args.noise_sigma,
        "subject_effect_sigma": args.subject_sigma,
    })
    section["seed"] = _seed(args, run_config, default=section.get("seed", 0))
    unknown = set(section) - {f for f in SynthSpec.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    spec = SynthSpec(**section)
    records, manifest_path = generate_synthetic(spec, out_dir)
    _echo_config(out_dir, {"synth": spec.to_dict(), "seed": spec.seed})
    _note(f"wrote {len(records)} clips under {out_dir}")
    _emit({"manifest": str(manifest_path), "clips": len(records)})
    return 0


def _load_clip_frames(clip_dir):
    from PIL import Image

    paths = sorted(
        p for p in clip_dir.iterdir() if p.suffix.lower() in (".ppm", ".pgm")
    )
    if not paths:
        raise DataError(f"{clip_dir}: no .ppm/.pgm frames")
    frames = []
    for p in paths:
        try:
            with Image.open(p) as img:
                frames.append(np.asarray(img.convert("L"), dtype=np.float32) / 255.0)
        except OSError as exc:
            raise DataError(f"{p}: unreadable image: {exc}") from exc
    return frames


def cmd_extract(args):
    run_config = _load_run_config(args.config)
    out_dir = _out_dir(args, run_config)
    frames_dir = Path(args.frames_dir or run_config.get("paths", {}).get("frames_dir", ""))
    if not frames_dir or not frames_dir.is_dir():
        raise DataError(f"frames directory not found: {frames_dir}")

    records = []
    clip_dirs = sorted(p for p in frames_dir.iterdir() if p.is_dir())
    if not clip_dirs:
        raise DataError(f"{frames_dir}: no clip directories")
    for clip_dir in clip_dirs:
        meta_path = clip_dir / "clip.json"
        if not meta_path.exists():
            raise DataError(f"{clip_dir}: missing clip.json with subject_id and label")
        meta = json.loads(meta_path.read_text())
        frames = _load_clip_frames(clip_dir)
        crops_path = clip_dir / "crops.json"
        crops_by_frame = {}
        if crops_path.exists():
            for crop in read_crop_records(crops_path):
                crops_by_frame.setdefault(crop.frame_index, []).append(crop)

        keyframes = sample_keyframes(len(frames), args.keyframes)
        selected = []
        for idx in keyframes:
            frame = frames[idx]
            if idx in crops_by_frame:
                box = select_target_box(crops_by_frame[idx])
                frame = apply_crop(frame, box, margin_fraction=args.margin,
                                   out_size=args.crop_size)
            selected.append(frame)
        seq = toy_extract(selected, grid=args.grid)
        clip_id = meta.get("clip_id", clip_dir.name)
        rel_path = f"features/{clip_id}.fsq"
        write_features(out_dir / rel_path, seq)
        records.append(ClipRecord(
            clip_id=clip_id,
            subject_id=meta["subject_id"],
            label=meta["label"],
            feature_path=rel_path,
            n_frames=seq.n_frames,
            source_note=str(clip_dir),
        ))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    _echo_config(out_dir, {
        "extract": {"frames_dir": str(frames_dir), "grid": args.grid,
                    "keyframes": args.keyframes, "margin": args.margin,
                    "crop_size": args.crop_size},
    })
    _note(f"extracted {len(records)} clips -> {manifest_path}")
    _emit({"manifest": str(manifest_path), "clips": len(records)})
    return 0


def cmd_train(args):
    run_config = _load_run_config(args.config)
    out_dir = _out_dir(args, run_config)
    _check_not_completed(out_dir)
    manifest_path = _manifest_path(args, run_config)
    root = manifest_path.parent
    records = _records_sorted(manifest_path)
    model_config = _model_config(args, run_config, records, root)
    tconfig = _train_config(args, run_config, _seed(args, run_config))

    _echo_config(out_dir, {
        "model": model_config.to_dict(),
        "train": tconfig.to_dict(),
        "paths": {"manifest": str(manifest_path), "out_dir": str(out_dir)},
        "seed": tconfig.seed,
    })
    params, history = train(model_config, tconfig, records, root=root)
    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(ckpt_path, model_config, params)
    _atomic_write_bytes(out_dir / "history.json",
                        json.dumps(history.to_dict(), sort_keys=True).encode())
    summary = {"checkpoint": str(ckpt_path), "final_loss": history.train_loss[-1],
               "epochs": tconfig.epochs}
    _finish_run(out_dir, summary)
    _note(f"trained {model_config.kind} for {tconfig.epochs} epochs, "
          f"final loss {history.train_loss[-1]:.6f}")
    _emit(summary)
    return 0


def cmd_eval(args):
    run_config = _load_run_config(args.config)
    out_dir = _out_dir(args, run_config, required=False)
    manifest_path = _manifest_path(args, run_config)
    ckpt = args.checkpoint or run_config.get("paths", {}).get("checkpoint")
    if ckpt is None:
        raise ConfigError("no checkpoint: pass --checkpoint or set paths.checkpoint")
    model_config, params = load_checkpoint(ckpt, expect_kind=args.model)
    records = _records_sorted(manifest_path)
    report = evaluate_records(model_config, params, records, root=manifest_path.parent)
    doc = report.to_dict()
    if out_dir is not None:
        _check_not_completed(out_dir)
        _echo_config(out_dir, {
            "model": model_config.to_dict(),
            "paths": {"manifest": str(manifest_path), "checkpoint": str(ckpt)},
        })
        _atomic_write_bytes(out_dir / "metrics.json",
                            json.dumps(doc, sort_keys=True).encode())
        _finish_run(out_dir, {"weighted_f1": report.weighted_f1})
    _note(f"weighted F1 {report.weighted_f1:.4f} over {len(records)} clips")
    _emit(doc)
    return 0


def cmd_cv(args):
    run_config = _load_run_config(args.config)
    out_dir = _out_dir(args, run_config)
    _check_not_completed(out_dir)
    manifest_path = _manifest_path(args, run_config)
    root = manifest_path.parent
    records = _records_sorted(manifest_path)
    model_config = _model_config(args, run_config, records, root)
    seed = _seed(args, run_config)
    tconfig = _train_config(args, run_config, seed)
    plan = make_folds(records, num_folds=args.k, seed=seed)

    _echo_config(out_dir, {
        "model": model_config.to_dict(),
        "train": tconfig.to_dict(),
        "paths": {"manifest": str(manifest_path), "out_dir": str(out_dir)},
        "seed": seed,
        "folds": plan.to_dict(),
    })
    result = cross_validate(model_config, tconfig, records, plan, root=root, jobs=args.jobs)
    doc = result.to_dict()
    report_path = out_dir / "cv_report.json"
    _atomic_write_bytes(report_path, json.dumps(doc, sort_keys=True).encode())
    for i, fold in enumerate(result.per_fold):
        _note(f"fold {i}: weighted F1 {fold.weighted_f1:.4f}")
    _note(f"mean weighted F1 {result.mean_weighted_f1:.4f} "
          f"(std {result.std_weighted_f1:.4f}) in {result.wall_time_s:.1f} s")
    summary = {"report": str(report_path),
               "mean_weighted_f1": result.mean_weighted_f1,
               "std_weighted_f1": result.std_weighted_f1}
    _finish_run(out_dir, summary)
    _emit(summary)
    return 0


def cmd_stream(args):
    run_config = _load_run_config(args.config)
    out_dir = _out_dir(args, run_config, required=False)
    if out_dir is not None:
        _check_not_completed(out_dir)
    ckpt = args.checkpoint or run_config.get("paths", {}).get("checkpoint")
    if ckpt is None:
        raise ConfigError("no checkpoint: pass --checkpoint or set paths.checkpoint")
    section = _merged(run_config.get("stream", {}), {
        "window_size": args.window,
        "hop": args.hop,
        "emit_policy": args.emit_policy,
    })
    unknown = set(section) - {f for f in StreamConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown stream config keys: {sorted(unknown)}")
    sconfig = StreamConfig(**section)
    engine = StreamEngine.from_checkpoint(ckpt, sconfig)

    source = args.input or run_config.get("paths", {}).get("input")
    if source is None:
        raise ConfigError("no input: pass --input FILE or --input - for stdin")

    import time as _time

    if source == "-":
        results = []
        frames = 0
        started = _time.perf_counter()
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            out = engine.push(json.loads(line))
            frames += 1
            if out is not None:
                results.append(out)
                print(window_result_to_json(out, LABELS), flush=True)
        total = _time.perf_counter() - started
        stats = latency_stats(results, frames, total) if results else None
    else:
        results, stats = stream_file(engine, source)
        for out in results:
            print(window_result_to_json(out, LABELS))
        frames = engine.frames_pushed

    if stats is None:
        _note(f"no emissions: stream of {frames} frames is shorter than "
              f"window {sconfig.window_size}")
    else:
        text, doc = latency_report(stats)
        _note(text)
        if out_dir is not None:
            _atomic_write_bytes(out_dir / "latency.json",
                                json.dumps(doc, sort_keys=True).encode())
    if out_dir is not None:
        _echo_config(out_dir, {
            "stream": {"window_size": sconfig.window_size, "hop": sconfig.hop,
                       "emit_policy": sconfig.emit_policy},
            "paths": {"checkpoint": str(ckpt), "input": str(source)},
        })
        _finish_run(out_dir, {"emissions": len(results), "frames": frames})
    return 0


def cmd_report(args):
    try:
        with open(args.input, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read report {args.input}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.input}: invalid JSON: {exc}") from exc
    if "mean_weighted_f1" in doc:
        print(f"cross-validation report ({len(doc['per_fold'])} folds)")
        for fold in doc["per_fold"]:
            print(f"  fold {fold['fold']}: weighted F1 {fold['weighted_f1']:.4f}")
        print(f"  mean {doc['mean_weighted_f1']:.4f}  std {doc['std_weighted_f1']:.4f}  "
              f"wall {doc['wall_time_s']:.1f} s")
    elif "p95_ms" in doc:
        stats = parse_latency_report(doc)
        text, _ = latency_report(stats)
        print(text)
    elif "train_loss" in doc:
        losses = doc["train_loss"]
        print(f"training history: {len(losses)} epochs, "
              f"first loss {losses[0]:.6f}, final loss {losses[-1]:.6f}")
    else:
        raise DataError(f"{args.input}: unrecognized report document")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="stimseq",
        description="Temporal classification of stereotypical behaviors from "
                    "feature sequences",
    )
    parser.add_argument("--version", action="version", version=f"stimseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (cv only)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--clips-per-subject", type=int)
    p.add_argument("--frames", type=int, help="frames per clip")
    p.add_argument("--dim", type=int, help="feature dimension")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--subject-sigma", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="toy feature extraction from image clips")
    common(p)
    p.add_argument("--frames-dir", help="directory of per-clip image directories")
    p.add_argument("--grid", type=int, default=4, help="pooling grid (D = 2*grid^2)")
    p.add_argument("--keyframes", type=int, default=20)
    p.add_argument("--margin", type=float, default=0.1, help="crop margin fraction")
    p.add_argument("--crop-size", type=int, default=64)
    p.set_defaults(func=cmd_extract)

    def train_flags(p):
        p.add_argument("--model", choices=("lstm", "tcn", "mstcn", "mstcn_pp"))
        p.add_argument("--input-dim", type=int)
        p.add_argument("--manifest")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)

    p = sub.add_parser("train", help="train one model on a manifest")
    common(p)
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--model", choices=("lstm", "tcn", "mstcn", "mstcn_pp"),
                   help="require this model kind in the checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="subject-wise K-fold cross-validation")
    common(p)
    train_flags(p)
    p.add_argument("--k", type=int, default=5, help="number of folds")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("stream", help="sliding-window streaming inference")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="feature file, or - for NDJSON frames on stdin")
    p.add_argument("--window", type=int, help="window size (default 50)")
    p.add_argument("--hop", type=int, help="hop between windows (default 1)")
    p.add_argument("--emit-policy", choices=("every_hop", "on_change"))
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("report", help="render a JSON report as text")
    p.add_argument("--input", required=True, help="cv/latency/history JSON file")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StimseqError as exc:
        _note(f"error: {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
