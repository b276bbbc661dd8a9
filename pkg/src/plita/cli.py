"""Operator entry points: corpus generation, training, evaluation, ablation.

Every command resolves its configuration in one fixed order — explicit flags
beat the config file, the config file beats profile defaults — then records
the outcome in a run manifest *before* doing any work, so a run directory is
always replayable from its own metadata. Exit codes are a stable contract:
0 success, 1 runtime failure, 2 usage error.

Config files are plain ``key = value`` lines (# comments allowed); keys are
training options, with ``encoder.`` / ``heads.`` prefixes reaching the nested
architecture fields, e.g.::

    iterations = 300
    encoder.dim = 32
    heads.split_mode = true

Relative corpus paths fall back to $PLITA_DATA_DIR when they don't resolve
from the working directory.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import trainer
from .data import synth
from .data.corpus import CorpusError, read_corpus, select_dynamic_records, write_corpus
from .data.sampling import plan_offsets
from .data.synth import STRIP_SECONDS
from .model import EncoderConfig, HeadConfig, load_model_pair
from .optim import DivergedError
from .signal_prep import TARGET_FS


class UsageError(Exception):
    """Operator mistake: bad flags, bad config, unusable inputs."""


# ---------------------------------------------------------------- plumbing

def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_data_path(p):
    path = Path(p)
    if not path.exists() and not path.is_absolute():
        root = os.environ.get("PLITA_DATA_DIR", "")
        if root and (Path(root) / path).exists():
            return Path(root) / path
    return path


def _write_manifest(out_dir, command, config, inputs, outputs, seed):
    """Record the resolved run before any work happens. Never overwrites: a
    rerun in the same directory gets a numbered manifest of its own."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run_manifest.json"
    n = 2
    while path.exists():
        path = out / f"run_manifest_{n}.json"
        n += 1
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "inputs": {str(k): v for k, v in inputs.items()},
        "outputs": outputs,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _mark_complete(out_dir, command, extra=None):
    status = {"status": "complete", "command": command}
    if extra:
        status.update(extra)
    if os.environ.get("PLITA_DETERMINISTIC", "") != "1":
        status["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(Path(out_dir) / "status.json", "w") as f:
        json.dump(status, f, indent=2, sort_keys=True)


def _is_complete(out_dir):
    path = Path(out_dir) / "status.json"
    if not path.is_file():
        return False
    try:
        with open(path) as f:
            return json.load(f).get("status") == "complete"
    except (OSError, json.JSONDecodeError):
        return False


def _parse_value(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def read_config_file(path):
    """key = value lines; # starts a comment; values are bool/int/float/str."""
    opts = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise UsageError(f"{path}:{ln}: expected key = value, got {line!r}")
            key, value = stripped.split("=", 1)
            opts[key.strip()] = _parse_value(value)
    return opts


def _parse_bool_flag(name, value):
    if value is None:
        return None
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise UsageError(f"--{name} takes true or false, got {value!r}")


def _split_options(merged):
    enc, heads, top = {}, {}, {}
    for key, value in merged.items():
        if key.startswith("encoder."):
            enc[key[len("encoder.") :]] = value
        elif key.startswith("heads."):
            heads[key[len("heads.") :]] = value
        else:
            top[key] = value
    return enc, heads, top


def build_train_config(profile="desk", config_file=None, cli_opts=None):
    """Profile defaults <- config file <- CLI flags, in increasing priority."""
    if profile not in trainer.PROFILES:
        raise UsageError(f"unknown profile {profile!r}; choose from {sorted(trainer.PROFILES)}")
    merged = {}
    if config_file:
        merged.update(read_config_file(config_file))
    for key, value in (cli_opts or {}).items():
        if value is not None:
            merged[key] = value
    enc_over, head_over, top = _split_options(merged)
    cfg = trainer.PROFILES[profile]()
    try:
        if enc_over:
            cfg.encoder = EncoderConfig(**{**asdict(cfg.encoder), **enc_over})
        if head_over:
            cfg.heads = HeadConfig(**{**asdict(cfg.heads), **head_over})
        trainer._apply_overrides(cfg, top)
    except TypeError as e:
        raise UsageError(str(e))
    return cfg


def _augment_opts(text):
    if text is None:
        return {}
    parts = [p for p in text.lower().split(",") if p]
    if parts == ["none"]:
        return {"augment_reverse": False, "augment_flip": False}
    bad = [p for p in parts if p not in ("reverse", "flip")]
    if bad:
        raise UsageError(f"--augment takes reverse,flip or none; got {bad}")
    return {"augment_reverse": "reverse" in parts, "augment_flip": "flip" in parts}


def _load_corpus(path):
    corpus_dir = _resolve_data_path(path)
    if not corpus_dir.exists():
        raise UsageError(f"corpus path {path} not found (PLITA_DATA_DIR unset or no match)")
    records, manifest = read_corpus(corpus_dir)
    return corpus_dir, records, manifest


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} already has contents; pass --force to overwrite")
    cfg = synth.SynthConfig(
        subjects=args.subjects,
        states=args.states,
        duration_s=args.duration,
        noise=args.noise,
        seed=args.seed,
    )
    _write_manifest(
        out,
        "gen",
        asdict(cfg),
        inputs={},
        outputs=["manifest.json", "signals/", "labels/"],
        seed=args.seed,
    )
    records = synth.generate_corpus(cfg)
    write_corpus(out, records, global_meta={"generator": asdict(cfg)})
    _mark_complete(out, "gen", {"records": len(records)})
    print(f"wrote {len(records)} records to {out}")
    return 0


def _cli_train_opts(args):
    opts = {
        "iterations": args.iterations,
        "batch_size": args.batch,
        "n_inputs": args.N,
        "window_s": args.W,
        "metric": args.metric,
        "enable_iv": _parse_bool_flag("enable-iv", args.enable_iv),
        "enable_tv": _parse_bool_flag("enable-tv", args.enable_tv),
        "quality": args.quality,
        "seed": args.seed,
        "tau": args.tau,
        "lr": args.lr,
        "checkpoint_every": args.checkpoint_every,
    }
    opts.update(_augment_opts(args.augment))
    split = _parse_bool_flag("split", args.split)
    if split is not None:
        opts["heads.split_mode"] = split
    return opts


def _do_train(cfg, corpus_path, out_dir, resume=False, quietly=False):
    corpus_dir, records, _ = _load_corpus(corpus_path)
    # fail fast on an infeasible strip layout before any output is written
    strip_samp = int(round(STRIP_SECONDS * TARGET_FS))
    w_samp = int(round(cfg.window_s * TARGET_FS))
    plan_offsets(w_samp, cfg.n_inputs, strip_samp)
    _write_manifest(
        out_dir,
        "train",
        cfg.to_dict(),
        inputs={corpus_dir / "manifest.json": _sha256_file(corpus_dir / "manifest.json")},
        outputs=["metrics.csv", trainer._checkpoint_name(cfg.iterations)],
        seed=cfg.seed,
    )
    log = None if quietly else lambda msg: print(msg, flush=True)
    result = trainer.train(records, cfg, out_dir, resume=resume, log=log)
    _plot_losses(result.metrics_path, Path(out_dir) / "loss_curves.png")
    _mark_complete(out_dir, "train", {"steps": result.steps})
    return result


def cmd_train(args):
    cfg = build_train_config(args.profile, args.config, _cli_train_opts(args))
    result = _do_train(cfg, args.corpus, args.out, resume=args.resume)
    print(f"final checkpoint: {result.checkpoint_path}")
    return 0


def _probe_table(pair, records, normalize=False, quality="default"):
    return ev.export_embeddings(pair, records, normalize=normalize, quality=quality)


def _labels_available(table, label_field):
    if label_field != "label":
        return True  # resolve_labels raises with a precise message if absent
    return bool((np.asarray(table.labels) >= 0).any())


def _do_eval(checkpoint, corpus_path, out_dir, task, loo=False, label_field="label",
             folds=4, seed=0, dynamic_only=False, quietly=False):
    ckpt = _resolve_data_path(checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {checkpoint} not found")
    corpus_dir, records, _ = _load_corpus(corpus_path)
    if dynamic_only:
        records = select_dynamic_records(records)
        if not records:
            raise UsageError("no record passes the dynamic-label selection rule")
    pair, header, _ = load_model_pair(ckpt)
    config = {
        "task": task,
        "loo": loo,
        "label_field": label_field,
        "folds": folds,
        "seed": seed,
        "dynamic_only": dynamic_only,
        "checkpoint_step": header["step"],
    }
    _write_manifest(
        out_dir,
        "eval",
        config,
        inputs={
            ckpt: _sha256_file(ckpt),
            corpus_dir / "manifest.json": _sha256_file(corpus_dir / "manifest.json"),
        },
        outputs=["report.json"],
        seed=seed,
    )

    if task in ("probe", "sequence"):
        table = _probe_table(pair, records)
        if not _labels_available(table, label_field):
            raise UsageError(
                f"task {task!r} needs labels, but the corpus strips carry none"
            )
        if task == "probe":
            if loo:
                report = ev.leave_one_out(table, label_field=label_field)
            else:
                report = ev.linear_probe(table, label_field=label_field, folds=folds)
        else:
            report = ev.sequence_probe(table, seed=seed)
        payload = report.to_dict()
    elif task == "disentangle":
        table = _probe_table(pair, records, normalize=True)
        clusters = ev.disentangle(table)
        _plot_clusters(clusters, Path(out_dir) / "disentangle.png")
        payload = clusters.to_dict()
    else:  # importance
        table = _probe_table(pair, records)
        if not _labels_available(table, label_field):
            raise UsageError("task 'importance' needs labels, but the corpus strips carry none")
        clusters = ev.disentangle(ev.normalize_features(table))
        report = ev.permutation_importance(
            table, label_field=label_field, seed=seed, clusters=clusters
        )
        payload = report.to_dict()

    report_path = Path(out_dir) / "report.json"
    with open(report_path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    _mark_complete(out_dir, "eval", {"task": task})
    if not quietly:
        print(f"report: {report_path}")
    return payload


def cmd_eval(args):
    _do_eval(
        args.checkpoint,
        args.corpus,
        args.out,
        args.task,
        loo=args.loo,
        label_field=args.label_field,
        folds=args.folds,
        seed=args.seed,
        dynamic_only=args.dynamic_only,
    )
    return 0


# ---------------------------------------------------------------- ablation

ABLATION_COLUMNS = [
    "N",
    "W",
    "state_accuracy",
    "state_macro_f1",
    "state_auc",
    "trait_accuracy",
    "trait_macro_f1",
    "trait_auc",
]


def _parse_grid(specs):
    axes = {}
    for spec in specs:
        if "=" not in spec:
            raise UsageError(f"grid term {spec!r} is not KEY=v1,v2,...")
        key, values = spec.split("=", 1)
        key = key.strip()
        if key not in ("N", "W"):
            raise UsageError(f"grid axis must be N or W, got {key!r}")
        parsed = [_parse_value(v) for v in values.split(",") if v.strip()]
        if not parsed:
            raise UsageError(f"grid axis {key} has no values")
        axes[key] = parsed
    if not axes:
        raise UsageError("empty grid")
    return axes


def _grid_cells(axes, base_n, base_w):
    """One-factor-at-a-time cells around the base configuration: each N at the
    base W, then the base N at each remaining W."""
    cells = []
    for n in axes.get("N", [base_n]):
        cells.append((int(n), float(base_w)))
    for w in axes.get("W", [base_w]):
        cell = (int(base_n), float(w))
        if cell not in cells:
            cells.append(cell)
    return cells


def _cell_dir(out_dir, n, w):
    w_txt = f"{w:g}"
    return Path(out_dir) / f"N{n}_W{w_txt}"


def _run_cell(corpus_path, out_dir, profile, config_file, n, w, seed):
    """Train one grid cell and probe it for both label kinds; returns the
    ablation table row. Completed cells short-circuit via their status file."""
    cell = _cell_dir(out_dir, n, w)
    result_path = cell / "cell_result.json"
    if _is_complete(cell) and result_path.is_file():
        with open(result_path) as f:
            return json.load(f)
    cli_opts = {"n_inputs": n, "window_s": w}
    if seed is not None:
        cli_opts["seed"] = seed
    cfg = build_train_config(profile, config_file, cli_opts)
    train_out = cell / "train"
    result = _do_train(cfg, corpus_path, train_out, quietly=True)
    state = _do_eval(
        result.checkpoint_path, corpus_path, cell / "eval_state", "probe",
        quietly=True,
    )
    trait = _do_eval(
        result.checkpoint_path, corpus_path, cell / "eval_trait", "probe",
        label_field="trait", quietly=True,
    )
    row = {
        "N": n,
        "W": w,
        "state_accuracy": state["accuracy"],
        "state_macro_f1": state["macro_f1"],
        "state_auc": state["auc"],
        "trait_accuracy": trait["accuracy"],
        "trait_macro_f1": trait["macro_f1"],
        "trait_auc": trait["auc"],
    }
    with open(result_path, "w") as f:
        json.dump(row, f, indent=2, sort_keys=True)
    _mark_complete(cell, "ablate-cell", {"N": n, "W": w})
    return row


def cmd_ablate(args):
    axes = _parse_grid(args.grid)
    base = build_train_config(args.profile, args.base_config, {})
    cells = _grid_cells(axes, base.n_inputs, base.window_s)
    corpus_dir, _, _ = _load_corpus(args.corpus)
    _write_manifest(
        args.out,
        "ablate",
        {
            "grid": axes,
            "cells": [list(c) for c in cells],
            "profile": args.profile,
            "base_config": args.base_config,
            "parallel": args.parallel,
        },
        inputs={corpus_dir / "manifest.json": _sha256_file(corpus_dir / "manifest.json")},
        outputs=["ablation.csv"],
        seed=args.seed if args.seed is not None else base.seed,
    )
    jobs = [
        (args.corpus, args.out, args.profile, args.base_config, n, w, args.seed)
        for n, w in cells
    ]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(_run_cell_star, jobs))
    else:
        rows = []
        for job in jobs:
            print(f"cell N={job[4]} W={job[5]:g}", flush=True)
            rows.append(_run_cell(*job))
    table_path = Path(args.out) / "ablation.csv"
    with open(table_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ABLATION_COLUMNS)
        for row in rows:
            w.writerow([row["N"], f"{row['W']:g}"] + [
                f"{row[c]:.10g}" for c in ABLATION_COLUMNS[2:]
            ])
    _mark_complete(args.out, "ablate", {"cells": len(cells)})
    print(f"ablation table: {table_path}")
    return 0


def _run_cell_star(job):
    return _run_cell(*job)


# ---------------------------------------------------------------- plots

def _plot_losses(metrics_csv, out_png):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    iters, l_iv, l_tv, total = [], [], [], []
    with open(metrics_csv, newline="") as f:
        for row in csv.DictReader(f):
            iters.append(int(row["iter"]))
            l_iv.append(float(row["l_iv"]))
            l_tv.append(float(row["l_tv"]))
            total.append(float(row["total"]))
    if not iters:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iters, total, label="total", lw=1.2)
    ax.plot(iters, l_iv, label="parallel-invariant", lw=0.8, alpha=0.8)
    ax.plot(iters, l_tv, label="tempo-variant", lw=0.8, alpha=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def _plot_clusters(clusters, out_png):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, top, title in (
        (axes[0], clusters.top_invariant, "invariant cluster"),
        (axes[1], clusters.top_tempo_variant, "tempo-variant cluster"),
    ):
        feats = [str(f) for f, _ in top]
        ratios = [r for _, r in top]
        ax.bar(range(len(feats)), ratios)
        ax.set_xticks(range(len(feats)))
        ax.set_xticklabels(feats, rotation=90, fontsize=7)
        ax.axhline(0.33, color="k", ls="--", lw=0.8)
        ax.set_title(title)
        ax.set_xlabel("feature")
    axes[0].set_ylabel("appearance ratio")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(
        prog="plita",
        description="Self-supervised ECG representation training and evaluation.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic labeled corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=int, default=8)
    g.add_argument("--states", type=int, default=2)
    g.add_argument("--duration", type=float, default=600.0, help="seconds per record")
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a student/teacher pair")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--profile", choices=sorted(trainer.PROFILES), default="desk")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--iterations", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--N", type=int, help="strips per window")
    t.add_argument("--W", type=float, help="window seconds")
    t.add_argument("--metric", choices=("cosine", "euclidean"))
    t.add_argument("--enable-iv", metavar="BOOL")
    t.add_argument("--enable-tv", metavar="BOOL")
    t.add_argument("--split", metavar="BOOL", help="split encoder features between branches")
    t.add_argument("--augment", help="comma list of reverse,flip, or none")
    t.add_argument("--quality")
    t.add_argument("--seed", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="probe a trained checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--out", required=True)
    e.add_argument(
        "--task", required=True, choices=("probe", "sequence", "disentangle", "importance")
    )
    e.add_argument("--loo", action="store_true", help="leave-one-record-out folds")
    e.add_argument("--label-field", default="label")
    e.add_argument("--folds", type=int, default=4)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument(
        "--dynamic-only",
        action="store_true",
        help="drop records whose modal label exceeds 80%% before probing",
    )
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train/eval over an N,W sensitivity grid")
    a.add_argument("--corpus", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--profile", choices=sorted(trainer.PROFILES), default="desk")
    a.add_argument("--base-config", help="config file for the base cell")
    a.add_argument(
        "--grid",
        nargs="+",
        default=["N=3,4,5", "W=90,120,150"],
        help="axis terms like N=3,4,5 W=90,120,150",
    )
    a.add_argument("--parallel", type=int, default=1)
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CorpusError, trainer.TrainingDiverged, DivergedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, KeyError) as e:
        msg = e.args[0] if e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
