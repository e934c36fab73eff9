"""Command-line entry points: synth, render, prototypes, train, eval-matrix.

Exit codes: 0 success, 1 partial data failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import blobio
from .backbone import BackboneConfig, frozen_prefix, init_frozen
from .errors import (
    ConfigMismatch,
    HwclfaError,
    MissingCheckpoint,
    MissingFile,
    UnknownMode,
)
from .evaluator import cross_task_matrix, diff_matrix, emit_report, parse_matrix_csv
from .ingest import parse_trajectory_csv, read_manifest, synth_dataset
from .prototypes import build_all, load_prototypes, make_encoder, save_prototypes
from .render import ppm_bytes, render_trajectory
from .tasks import ALL_TASKS, all_tasks, task_meta
from .trainer import Sample, TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("hwclfa")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2
OUT_ENV = "HWCLFA_OUT"

DEFAULTS = {
    "manifest": None,
    "rendered": None,
    "backbone": dict(seed=0, **BackboneConfig().to_dict()),
    "train": TrainConfig().to_dict(),
    "prototypes": {"encoder": "lexical", "seed": 0, "file": None},
    "sources": None,
    "targets": None,
    "out": None,
}


class ConfigError(HwclfaError):
    pass


def parse_tasks(text):
    """'1..25', '3-5', '9' or comma lists of those."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        for sep in ("..", "-"):
            if sep in part:
                a, b = part.split(sep, 1)
                out.extend(range(int(a), int(b) + 1))
                break
        else:
            out.append(int(part))
    bad = [t for t in out if t not in ALL_TASKS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"task ids must be within 1..25, got {text!r}")
    return sorted(set(out))


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, doc)
        base = Path(path).resolve().parent
        for key in ("manifest", "rendered", "out"):
            if cfg[key] and not Path(cfg[key]).is_absolute():
                cfg[key] = str(base / cfg[key])
        if cfg["prototypes"].get("file") and not Path(cfg["prototypes"]["file"]).is_absolute():
            cfg["prototypes"]["file"] = str(base / cfg["prototypes"]["file"])
    cfg = _merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})
    for key in ("sources", "targets"):
        if cfg[key] is not None:
            cfg[key] = parse_tasks(",".join(str(t) for t in cfg[key])) if isinstance(cfg[key], list) \
                else parse_tasks(cfg[key])
    return cfg


def _out_dir(args, cfg=None, default="run"):
    out = getattr(args, "out", None) or (cfg or {}).get("out")
    if not out:
        out = str(Path(os.environ.get(OUT_ENV, "hwclfa_out")) / default)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _snapshot(out, cfg, command):
    doc = dict(cfg, command=command)
    (out / "resolved_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _backbone(cfg):
    b = dict(cfg["backbone"])
    seed = b.pop("seed", 0)
    return init_frozen(seed, BackboneConfig.from_dict(b))


def _train_config(cfg):
    t = dict(cfg["train"])
    t.setdefault("tapped_layers", cfg["backbone"]["tapped_layers"])
    return TrainConfig.from_dict(t)


def _prototypes(cfg, width):
    spec = cfg["prototypes"]
    if spec.get("file"):
        protos = load_prototypes(spec["file"])
    else:
        protos = build_all(make_encoder(spec.get("encoder", "lexical"), spec.get("seed", 0), width), all_tasks())
    for p in protos.values():
        if p.width != width:
            raise ConfigMismatch(f"prototype width {p.width} != adapter bottleneck {width}")
    return protos


# ---------------------------------------------------------------------------
# rendered store


def _render_entry(args):
    path, subject, task, label, fs = args
    with open(path) as fh:
        traj = parse_trajectory_csv(fh, subject, task, label)
    return render_trajectory(traj, fs_hz=fs)


def _store_name(task):
    return f"task_{task:02d}.clfa"


def load_store(store_dir, tasks=None):
    """{task: [(subject, label, image)]} from a rendered store directory."""
    store_dir = Path(store_dir)
    index = json.loads((store_dir / "index.json").read_text())
    out = {}
    by_file = {}
    for rec in index["records"]:
        if tasks is None or rec["task"] in tasks:
            by_file.setdefault(rec["file"], []).append(rec)
    for name in sorted(by_file):
        _, tensors = blobio.unpack((store_dir / name).read_bytes())
        for rec in by_file[name]:
            img = tensors[rec["record"]].astype(np.float64)
            out.setdefault(rec["task"], []).append((rec["subject"], rec["label"], img))
    return out


def _samples(cfg, backbone, tasks):
    """Frozen-prefix samples per task, from the rendered store or the manifest."""
    if cfg.get("rendered"):
        images = load_store(cfg["rendered"], set(tasks))
    elif cfg.get("manifest"):
        manifest = read_manifest(cfg["manifest"])
        images = {}
        for e in manifest.entries:
            if e.task in tasks:
                img = _render_entry((manifest.resolve(e), e.subject, e.task, e.label, manifest.sampling_rate_hz))
                images.setdefault(e.task, []).append((e.subject, e.label, img))
    else:
        raise ConfigError("config needs a 'rendered' store or a 'manifest'")
    return {
        t: [Sample(sid, t, y, frozen_prefix(backbone, img)) for sid, y, img in images.get(t, [])]
        for t in tasks
    }


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    out = _out_dir(args, default="synth")
    manifest = synth_dataset(out, args.seed, args.subjects, args.tasks, args.fs)
    print(f"wrote {len(manifest.entries)} trajectories to {out}")
    return EXIT_OK


def cmd_render(args):
    manifest = read_manifest(args.manifest)
    manifest.validate(check_files=False)
    out = _out_dir(args, default="rendered")
    work = [(manifest.resolve(e), e.subject, e.task, e.label, manifest.sampling_rate_hz) for e in manifest.entries]
    results = []
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_render_entry, w) for w in work]
            for f in futures:
                try:
                    results.append(f.result())
                except (HwclfaError, OSError, ValueError) as exc:
                    results.append(exc)
    else:
        for w in work:
            try:
                results.append(_render_entry(w))
            except (HwclfaError, OSError, ValueError) as exc:
                results.append(exc)

    records, errors, per_task = [], [], {}
    for e, res in zip(manifest.entries, results):
        if isinstance(res, Exception):
            errors.append((e.path, e.subject, e.task, type(res).__name__, str(res)))
            continue
        name = f"task{e.task:02d}/{e.subject}"
        per_task.setdefault(e.task, {})[name] = res
        records.append({"record": name, "file": _store_name(e.task), "path": e.path,
                        "subject": e.subject, "task": e.task, "label": e.label})
        if args.dump_ppm:
            ppm = out / "ppm" / f"task{e.task:02d}" / f"{e.subject}.ppm"
            ppm.parent.mkdir(parents=True, exist_ok=True)
            ppm.write_bytes(ppm_bytes(res))
    for task, tensors in sorted(per_task.items()):
        doc = {"format": "hwclfa-images", "task": task}
        (out / _store_name(task)).write_bytes(blobio.pack(doc, tensors))
    index = {"manifest": str(Path(args.manifest).resolve()), "records": records}
    (out / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "subject", "task", "error", "message"])
    w.writerows(errors)
    (out / "errors.csv").write_text(buf.getvalue())
    print(f"rendered {len(records)} of {len(work)} records; {len(errors)} failed")
    return EXIT_DATA if errors else EXIT_OK


def cmd_prototypes(args):
    out = _out_dir(args, default="prototypes")
    protos = build_all(make_encoder(args.encoder, args.seed, args.width), all_tasks())
    json_path, blob_path = save_prototypes(protos, out / "prototypes.json")
    print(f"wrote {json_path} and {blob_path}")
    return EXIT_OK


def cmd_train(args):
    overrides = {"train": {"epochs": args.epochs, "learning_rate": args.lr, "seed": args.seed}}
    overrides["train"] = {k: v for k, v in overrides["train"].items() if v is not None}
    cfg = load_config(args.config, overrides)
    out = _out_dir(args, cfg, default="checkpoints")
    _snapshot(out, cfg, "train")
    backbone = _backbone(cfg)
    tcfg = _train_config(cfg)
    if tcfg.tapped_layers != backbone.config.tapped_layers:
        raise ConfigMismatch(f"train layers {tcfg.tapped_layers} != backbone taps {backbone.config.tapped_layers}")
    protos = _prototypes(cfg, tcfg.bottleneck)
    samples = _samples(cfg, backbone, args.source_task)
    for task in args.source_task:
        result = train(samples, task, tcfg, backbone, protos[task].matrix)
        meta = {"source_task": task, "task_name": task_meta(task).name, "seed": tcfg.seed,
                "train": tcfg.to_dict(), "backbone_hash": backbone.weight_hash(),
                "backbone": cfg["backbone"], "samples": len(samples[task])}
        (out / f"task_{task:02d}.clfa").write_bytes(save_checkpoint(result.stack, meta))
        lines = ["step,loss"] + [f"{i},{v!r}" for i, v in enumerate(result.losses)]
        (out / f"task_{task:02d}_loss_trace.csv").write_text("\n".join(lines) + "\n")
        print(f"task {task}: first epoch {result.epoch_means[0]:.4f}, last {result.epoch_means[-1]:.4f}")
    return EXIT_OK


def cmd_eval_matrix(args):
    cfg = load_config(args.config, {"sources": args.sources, "targets": args.targets})
    out = _out_dir(args, cfg, default="report")
    _snapshot(out, cfg, "eval-matrix")
    ckpt_dir = Path(args.checkpoints_dir)
    sources = cfg["sources"]
    if sources is None:
        sources = sorted(int(p.stem.split("_")[1]) for p in ckpt_dir.glob("task_*.clfa"))
        if not sources:
            raise MissingCheckpoint(f"no checkpoints in {ckpt_dir}")
    targets = cfg["targets"] or list(ALL_TASKS)
    backbone = _backbone(cfg)
    stacks = {}
    for s in sources:
        path = ckpt_dir / f"task_{s:02d}.clfa"
        if not path.is_file():
            raise MissingCheckpoint(f"no checkpoint for source task {s} ({path})")
        stacks[s] = load_checkpoint(path.read_bytes())
        if stacks[s].extra.get("backbone_hash", backbone.weight_hash()) != backbone.weight_hash():
            raise ConfigMismatch(f"checkpoint for task {s} was trained on a different backbone")
    width = stacks[sources[0]].bottleneck
    protos = _prototypes(cfg, width)
    samples = _samples(cfg, backbone, targets)
    empty = [t for t in targets if not samples[t]]
    if empty:
        raise MissingFile(f"no samples for target tasks {empty}")
    matrix = cross_task_matrix(stacks, samples, protos, backbone, targets, jobs=args.jobs)
    diff = None
    if args.baseline:
        diff = diff_matrix(matrix, parse_matrix_csv(Path(args.baseline).read_text()))
    emit_report(matrix, out, diff=diff, k=100)
    missing = int((~np.isfinite(matrix.values)).sum())
    print(f"{matrix.shape[0]}x{matrix.shape[1]} matrix written to {out}; {missing} missing cells")
    return EXIT_DATA if missing else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="hwclfa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic trajectory dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--subjects", type=int, default=40, help="per task, first half healthy")
    s.add_argument("--tasks", type=parse_tasks, default=list(ALL_TASKS), help="e.g. 1..25, 3-5 or 2,9")
    s.add_argument("--fs", type=float, default=200.0)
    s.add_argument("--out", help="output directory (default under $HWCLFA_OUT)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("render", help="render every manifest entry to an image record")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", help="output directory (default under $HWCLFA_OUT)")
    s.add_argument("--dump-ppm", action="store_true", help="also write each image as a P6 file")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("prototypes", help="build text prototypes for all tasks")
    s.add_argument("--encoder", choices=("stub", "lexical"), default="lexical")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=16, help="embedding width, must match the bottleneck")
    s.add_argument("--out", help="output directory (default under $HWCLFA_OUT)")
    s.set_defaults(func=cmd_prototypes)

    s = sub.add_parser("train", help="train adapters on one or more source tasks")
    s.add_argument("--config")
    s.add_argument("--source-task", type=parse_tasks, required=True, help="task id or range")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory (default under $HWCLFA_OUT)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-matrix", help="cross-task AUC matrix and report files")
    s.add_argument("--config")
    s.add_argument("--checkpoints-dir", required=True, help="directory of task_NN.clfa files")
    s.add_argument("--sources", type=parse_tasks)
    s.add_argument("--targets", type=parse_tasks)
    s.add_argument("--baseline", help="matrix.csv to diff against (enables top_k.csv)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="output directory (default under $HWCLFA_OUT)")
    s.set_defaults(func=cmd_eval_matrix)
    return p


_CONFIG_ERRORS = (ConfigError, ConfigMismatch, MissingCheckpoint, MissingFile, UnknownMode,
                  FileNotFoundError, ValueError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HwclfaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
