"""Window and strip sampling for training batches.

A training item is a window of W seconds drawn from each of a subject's two
records; within a window, N strips of 10 s are placed at exactly equal
integer spacing: spacing = (W_samp - strip_samp) // (N - 1), offsets
i*spacing. All arithmetic is on sample indices, so the equal-spacing
invariant is exact and the last strip always ends inside the window.
Feasibility requires (W - 10) / (N - 1) >= 10 seconds, i.e. strips never
overlap; W = 40 s with N = 4 is the accepted boundary (contiguous strips).

Each extracted strip is re-normalized to zero mean and unit variance, so the
encoder sees the same input scale regardless of where a window lands
relative to the storage normalization grid.
"""

from dataclasses import dataclass

import numpy as np

from ..signal_prep import normalize_unit_variance, accept_all

STRIP_SECONDS = 10.0


@dataclass
class WindowSample:
    subject_id: str
    record_id: str
    window_start: int  # sample index into the record
    offsets: np.ndarray  # window-relative strip starts, samples, ascending
    strips: np.ndarray  # [N, strip_samples] float32, per-strip normalized


@dataclass
class TrainingBatch:
    items: list  # list of (WindowSample, WindowSample), one per subject draw

    def __len__(self):
        return len(self.items)

    def to_array(self):
        """[B, 2, N, L] float32 in item/record/strip order."""
        return np.stack(
            [np.stack([a.strips, b.strips]) for a, b in self.items]
        ).astype(np.float32)


def plan_offsets(window_samples, n_inputs, strip_samples):
    """Equally spaced strip offsets inside a window, integer samples."""
    if n_inputs < 1:
        raise ValueError(f"n_inputs must be >= 1, got {n_inputs}")
    if window_samples < strip_samples:
        raise ValueError(
            f"window of {window_samples} samples cannot hold a "
            f"{strip_samples}-sample strip"
        )
    if n_inputs == 1:
        return np.zeros(1, dtype=np.int64)
    spacing = (window_samples - strip_samples) // (n_inputs - 1)
    if spacing < strip_samples:
        raise ValueError(
            f"infeasible strip layout: need (W - 10)/(N - 1) >= 10 s, got "
            f"({window_samples} - {strip_samples})/({n_inputs} - 1) = "
            f"{(window_samples - strip_samples) / (n_inputs - 1):.1f} < {strip_samples} samples"
        )
    return np.arange(n_inputs, dtype=np.int64) * spacing


def sample_window(record, window_s, n_inputs, rng, predicate=accept_all, max_tries=100):
    """Draw one window; re-draws (up to max_tries) until the quality
    predicate keeps every strip."""
    fs = record.signal.fs
    x = record.signal.samples
    w_samp = int(round(window_s * fs))
    strip_samp = int(round(STRIP_SECONDS * fs))
    if x.shape[0] < w_samp:
        raise ValueError(
            f"record {record.record_id} has {x.shape[0]} samples, "
            f"window needs {w_samp}"
        )
    offsets = plan_offsets(w_samp, n_inputs, strip_samp)
    for _ in range(max_tries):
        start = int(rng.integers(0, x.shape[0] - w_samp + 1))
        strips = np.empty((n_inputs, strip_samp), dtype=np.float32)
        ok = True
        for i, off in enumerate(offsets):
            raw = x[start + off : start + off + strip_samp]
            if not predicate(raw, fs):
                ok = False
                break
            strips[i] = normalize_unit_variance(raw).astype(np.float32)
        if ok:
            return WindowSample(
                subject_id=record.subject_id,
                record_id=record.record_id,
                window_start=start,
                offsets=offsets,
                strips=strips,
            )
    raise RuntimeError(
        f"quality predicate rejected {max_tries} consecutive windows "
        f"of record {record.record_id}"
    )


def build_batch(pair_index, batch_size, window_s, n_inputs, rng, predicate=accept_all):
    """Batch of subject draws (uniform, with replacement), one window per record."""
    subjects = pair_index.subjects
    picks = rng.integers(0, len(subjects), size=batch_size)
    items = []
    for k in picks:
        rec_a, rec_b = pair_index.pairs[subjects[int(k)]]
        wa = sample_window(rec_a, window_s, n_inputs, rng, predicate)
        wb = sample_window(rec_b, window_s, n_inputs, rng, predicate)
        items.append((wa, wb))
    return TrainingBatch(items=items)


def grid_strips(record, predicate=accept_all):
    """Yield (strip_index, normalized strip) on the fixed 10 s grid, skipping
    strips the quality predicate rejects."""
    fs = record.signal.fs
    x = record.signal.samples
    strip_samp = int(round(STRIP_SECONDS * fs))
    for k in range(x.shape[0] // strip_samp):
        raw = x[k * strip_samp : (k + 1) * strip_samp]
        if predicate(raw, fs):
            yield k, normalize_unit_variance(raw).astype(np.float32)
