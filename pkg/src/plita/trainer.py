"""Training loop: batch -> student/teacher forward -> losses -> Adam -> EMA.

Each iteration draws a fresh batch with an iteration-keyed counter RNG, so
run state is a pure function of (seed, iteration); resuming from a
checkpoint replays the identical batch stream and is bit-exact. Metrics go
to metrics.csv (iter,l_iv,l_tv,total,grad_norm,ema_gap,ms); with
PLITA_DETERMINISTIC=1 the wall-time column records 0 so same-seed runs
produce byte-identical outputs.

Two named profiles: 'desk' (2k iterations, batch 32, dim 64, depth 2) sized
for a single CPU core, and 'paper' (35k iterations, batch 256, dim 128,
depth 6) which documents the full-scale configuration without being runnable
here in reasonable time.
"""

import csv
import os
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import losses
from .data.corpus import SubjectPairIndex
from .data.sampling import build_batch
from .data.synth import make_rng
from .model import EncoderConfig, HeadConfig, ModelPair, save_checkpoint, read_checkpoint, restore_weights
from .optim import Adam, DivergedError
from .signal_prep import get_quality_predicate

_STREAM_BATCH = 3 << 48

METRICS_COLUMNS = ["iter", "l_iv", "l_tv", "total", "grad_norm", "ema_gap", "ms"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 32
    n_inputs: int = 4
    window_s: float = 120.0
    tau: float = 0.995
    lr: float = 3e-4
    weight_decay: float = 1.5e-6
    metric: str = "cosine"
    enable_iv: bool = True
    enable_tv: bool = True
    augment_reverse: bool = False
    augment_flip: bool = False
    quality: str = "default"
    seed: int = 0
    checkpoint_every: int = 500
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        if not (self.enable_iv or self.enable_tv):
            raise ValueError("both loss arms disabled; nothing to train")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")

    def to_dict(self):
        d = asdict(self)
        return d


def desk_profile(**overrides):
    cfg = TrainConfig(
        iterations=2000,
        batch_size=32,
        encoder=EncoderConfig(dim=64, depth=2, heads=4),
    )
    return _apply_overrides(cfg, overrides)


def paper_profile(**overrides):
    cfg = TrainConfig(
        iterations=35000,
        batch_size=256,
        encoder=EncoderConfig(dim=128, depth=6, heads=4),
    )
    return _apply_overrides(cfg, overrides)


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def _apply_overrides(cfg, overrides):
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise TypeError(f"unknown training option {key!r}")
        setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    steps: int
    pair: ModelPair
    history: list


def _item_slices(b, n):
    """Row ranges of (item, record) blocks in the flattened strip tensor."""
    out = []
    for item in range(b):
        base = item * 2 * n
        out.append((slice(base, base + n), slice(base + n, base + 2 * n)))
    return out


def forward_losses(pair, batch_array, cfg):
    """Build the loss graph for one batch; returns (total, l_iv, l_tv) tensors.

    batch_array is [B, 2, N, L] float; l_iv / l_tv are batch means and may be
    None when the corresponding arm is disabled.
    """
    b, two, n, length = batch_array.shape
    assert two == 2
    flat = batch_array.reshape(b * 2 * n, length).astype(pair.dtype)
    x = ag.Tensor(flat)
    h_s = pair.encode(x, "student")
    h_t = pair.encode(x, "teacher")

    student = {}
    teacher = {}
    if cfg.enable_iv:
        student["iv"] = pair.predict(pair.project(h_s, "iv", "student"), "iv")
        teacher["iv"] = pair.project(h_t, "iv", "teacher")
    if cfg.enable_tv:
        student["tv"] = pair.predict(pair.project(h_s, "tv", "student"), "tv")
        teacher["tv"] = pair.project(h_t, "tv", "teacher")

    iv_terms, tv_terms = [], []
    for sl1, sl2 in _item_slices(b, n):
        proj = {}
        if cfg.enable_iv:
            proj["q_iv1"] = student["iv"][sl1]
            proj["q_iv2"] = student["iv"][sl2]
            proj["zeta_iv1"] = teacher["iv"][sl1]
            proj["zeta_iv2"] = teacher["iv"][sl2]
        if cfg.enable_tv:
            proj["q_tv1"] = student["tv"][sl1]
            proj["q_tv2"] = student["tv"][sl2]
            proj["zeta_tv1"] = teacher["tv"][sl1]
            proj["zeta_tv2"] = teacher["tv"][sl2]
        l_iv, l_tv = losses.pair_losses(
            proj, cfg.metric, enable_iv=cfg.enable_iv, enable_tv=cfg.enable_tv
        )
        if l_iv is not None:
            iv_terms.append(ag.reshape(l_iv, (1,)))
        if l_tv is not None:
            tv_terms.append(ag.reshape(l_tv, (1,)))

    l_iv_mean = ag.mean(ag.concatenate(iv_terms)) if iv_terms else None
    l_tv_mean = ag.mean(ag.concatenate(tv_terms)) if tv_terms else None
    if l_iv_mean is not None and l_tv_mean is not None:
        total = l_iv_mean + l_tv_mean
    else:
        total = l_iv_mean if l_iv_mean is not None else l_tv_mean
    return total, l_iv_mean, l_tv_mean


def grad_norm(params):
    acc = 0.0
    for p in params:
        if p.grad is not None:
            acc += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(acc))


def train_step(pair, optimizer, batch_array, cfg, iteration):
    """One full optimization step; returns a metrics dict (sans timing)."""
    params = pair.student_params()
    ag.zero_grad(params)
    total, l_iv, l_tv = forward_losses(pair, batch_array, cfg)
    total_val = total.item()
    if not np.isfinite(total_val):
        raise TrainingDiverged(f"loss became non-finite at iteration {iteration}")
    ag.backward(total, params)
    gnorm = grad_norm(params)
    optimizer.step()
    pair.ema_update()
    return {
        "iter": iteration,
        "l_iv": l_iv.item() if l_iv is not None else 0.0,
        "l_tv": l_tv.item() if l_tv is not None else 0.0,
        "total": total_val,
        "grad_norm": gnorm,
        "ema_gap": pair.ema_gap(),
    }


def _checkpoint_name(step):
    return f"checkpoint_{step:06d}.bin"


def _find_latest_checkpoint(out_dir):
    candidates = sorted(Path(out_dir).glob("checkpoint_*.bin"))
    return candidates[-1] if candidates else None


def _format_row(row):
    return [row["iter"]] + [f"{row[c]:.10g}" for c in METRICS_COLUMNS[1:]]


def train(records, cfg, out_dir, resume=False, log=None):
    """Run (or resume) training on a list of Recordings; writes checkpoints
    and metrics.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    deterministic = os.environ.get("PLITA_DETERMINISTIC", "") == "1"
    index = SubjectPairIndex(records)
    predicate = get_quality_predicate(cfg.quality)
    metrics_path = out / "metrics.csv"

    pair = ModelPair(cfg.encoder, cfg.heads, tau=cfg.tau, seed=cfg.seed)
    optimizer = Adam(
        pair.student_params(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    start_step = 0
    history = []
    if resume:
        latest = _find_latest_checkpoint(out)
        if latest is None:
            raise FileNotFoundError(f"resume requested but no checkpoint in {out}")
        header, arrays = read_checkpoint(latest)
        _check_resume_config(header, cfg)
        restore_weights(pair, arrays)
        optimizer.load_state_arrays(arrays, header["optimizer_step"])
        start_step = int(header["step"])
        history = _load_metrics_upto(metrics_path, start_step)
        if log:
            log(f"resumed from {latest.name} at step {start_step}")

    # truncate any rows past the resume point, then append as we go
    with open(metrics_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_COLUMNS)
        for row in history:
            w.writerow(_format_row(row))

    with open(metrics_path, "a", newline="") as f:
        w = csv.writer(f)
        for k in range(start_step + 1, cfg.iterations + 1):
            t0 = time.perf_counter()
            rng = make_rng(cfg.seed, _STREAM_BATCH + k)
            batch = build_batch(
                index, cfg.batch_size, cfg.window_s, cfg.n_inputs, rng, predicate
            )
            arr = batch.to_array()
            if cfg.augment_reverse or cfg.augment_flip:
                arr = losses.augment_strips(
                    arr, rng, reverse=cfg.augment_reverse, flip=cfg.augment_flip
                )
            row = train_step(pair, optimizer, arr, cfg, k)
            row["ms"] = 0.0 if deterministic else (time.perf_counter() - t0) * 1e3
            history.append(row)
            w.writerow(_format_row(row))
            f.flush()
            periodic = cfg.checkpoint_every > 0 and k % cfg.checkpoint_every == 0
            if periodic or k == cfg.iterations:
                save_checkpoint(
                    out / _checkpoint_name(k), pair, optimizer, k, cfg.to_dict()
                )
            if log and (k % 100 == 0 or k == cfg.iterations):
                log(
                    f"iter {k}/{cfg.iterations} total={row['total']:.4f} "
                    f"l_iv={row['l_iv']:.4f} l_tv={row['l_tv']:.4f}"
                )

    final = out / _checkpoint_name(cfg.iterations)
    return TrainResult(
        checkpoint_path=final,
        metrics_path=metrics_path,
        steps=cfg.iterations,
        pair=pair,
        history=history,
    )


_RESUME_FIELDS = ("input_len", "patch", "dim", "depth", "heads", "mlp_ratio")


def _check_resume_config(header, cfg):
    saved_enc = header["encoder"]
    now_enc = asdict(cfg.encoder)
    bad = [f for f in _RESUME_FIELDS if saved_enc[f] != now_enc[f]]
    saved_heads = header["heads"]
    now_heads = asdict(cfg.heads)
    bad += [f for f in now_heads if saved_heads.get(f) != now_heads[f]]
    if bad:
        raise ValueError(
            f"checkpoint was trained with a different architecture; "
            f"mismatched fields: {bad}"
        )


def _load_metrics_upto(path, step):
    if not Path(path).is_file():
        return []
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            if int(rec["iter"]) <= step:
                rows.append({c: (int(rec[c]) if c == "iter" else float(rec[c])) for c in METRICS_COLUMNS})
    return rows
