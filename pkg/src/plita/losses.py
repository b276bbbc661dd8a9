"""Invariant and tempo-variant objectives over projection matrices.

Both losses consume a distance matrix between a teacher projection row-side
and a student prediction column-side; the row side is wrapped in
stop_gradient here, so gradients only ever flow through the student columns.

* invariant: the mean of the full cross-record distance matrix (all N*N
  entries, diagonal included) — every strip of record 1 is pulled toward
  every strip of record 2, in both directions, averaged.
* tempo-variant: within one record, pairwise strip distances are min-max
  rescaled onto [1/(N-1), 1] and regressed onto the ideal profile
  |i - j|/(N-1); the mean squared error runs over off-diagonal entries with
  normalizer 1/(N*(N-1)).

The distance metric is cosine by default; Euclidean is kept as an ablation
arm. N = 2 is accepted but degenerate for the tempo loss (the rescale target
interval collapses to the single point 1).
"""

import numpy as np

from . import autograd as ag

COSINE_EPS = 1e-8


def _check_widths(rows, cols, what):
    if rows.ndim != 2 or cols.ndim != 2:
        raise ag.ShapeError(
            f"{what}: expected 2-d projections, got {rows.shape} and {cols.shape}"
        )
    if rows.shape[1] != cols.shape[1]:
        raise ag.ShapeError(
            f"{what}: projection widths differ: rows {rows.shape} vs cols {cols.shape}"
        )


def cosine_distance_matrix(rows, cols, eps=COSINE_EPS):
    """M[i, j] = 1 - <rows_i, cols_j> / max(|rows_i| * |cols_j|, eps).

    rows is the no-gradient (teacher) side. Entries lie in [0, 2]; the eps
    guard keeps zero vectors finite (distance 1, and the gradient through the
    dot term stays finite at slope -row/eps).
    """
    _check_widths(rows, cols, "cosine_distance_matrix")
    rows = ag.stop_gradient(rows)
    dots = ag.matmul(rows, ag.transpose(cols))
    rn = ag.l2_norm(rows, axis=1, keepdims=True)
    cn = ag.l2_norm(cols, axis=1, keepdims=True)
    denom = ag.clamp_min(rn * ag.transpose(cn), eps)
    return 1.0 - dots / denom


def euclidean_distance_matrix(rows, cols):
    """M[i, j] = |rows_i - cols_j|; rows is the no-gradient side."""
    _check_widths(rows, cols, "euclidean_distance_matrix")
    rows = ag.stop_gradient(rows)
    n, d = rows.shape
    m = cols.shape[0]
    diff = ag.reshape(rows, (n, 1, d)) - ag.reshape(cols, (1, m, d))
    return ag.l2_norm(diff, axis=2)


_METRICS = {
    "cosine": cosine_distance_matrix,
    "euclidean": euclidean_distance_matrix,
}


def distance_matrix(rows, cols, metric="cosine"):
    try:
        fn = _METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; known: {sorted(_METRICS)}") from None
    return fn(rows, cols)


def ideal_tv_matrix(n):
    """Target profile |i - j| / (n - 1), float64, zeros diagonal, ones corners."""
    if n < 2:
        raise ValueError(f"tempo profile needs n >= 2 strips, got {n}")
    idx = np.arange(n, dtype=np.float64)
    return np.abs(idx[:, None] - idx[None, :]) / (n - 1)


def rescale_tv(m, n):
    """Min-max rescale of a distance matrix onto [1/(n-1), 1].

    Min and max run over the *full* matrix, diagonal included; on ties the
    subgradient goes to the first extremal entry. A constant matrix (max ==
    min) maps to the constant lower bound with zero gradient. Output is
    clamped so float round-off cannot leave the interval.
    """
    lo = 1.0 / (n - 1)
    hi = 1.0
    mn = ag.min_(m)
    mx = ag.max_(m)
    if float(mx.data) == float(mn.data):
        return ag.constant(np.full(m.shape, lo), m.dtype)
    scaled = lo + (m - mn) * (hi - lo) / (mx - mn)
    return ag.clamp(scaled, lo, hi)


def loss_iv(zeta, q, metric="cosine"):
    """Invariant loss: mean of the full distance matrix, diagonal included."""
    mat = distance_matrix(zeta, q, metric)
    return ag.mean(mat)


def loss_tv(zeta, q, metric="cosine"):
    """Tempo loss: off-diagonal MSE between the rescaled distance matrix and
    the ideal profile, normalized by n*(n-1)."""
    n = zeta.shape[0]
    if n < 2:
        raise ValueError(f"tempo loss needs at least 2 strips, got {n}")
    mat = rescale_tv(distance_matrix(zeta, q, metric), n)
    ideal = ag.constant(ideal_tv_matrix(n), mat.dtype)
    diff = ideal - mat
    off = ag.constant(1.0 - np.eye(n), mat.dtype)
    return ag.sum_(diff * diff * off) / float(n * (n - 1))


def pair_losses(proj, metric="cosine", enable_iv=True, enable_tv=True):
    """Per-item losses from one subject's two records.

    proj maps names to [N, d] tensors: q_iv1/q_iv2/q_tv1/q_tv2 (student
    predictions) and zeta_iv1/zeta_iv2/zeta_tv1/zeta_tv2 (teacher
    projections). The invariant arm crosses records in both directions; the
    tempo arm stays within each record. Disabled arms return None.
    """
    l_iv = None
    l_tv = None
    if enable_iv:
        l_iv = 0.5 * (
            loss_iv(proj["zeta_iv2"], proj["q_iv1"], metric)
            + loss_iv(proj["zeta_iv1"], proj["q_iv2"], metric)
        )
    if enable_tv:
        l_tv = 0.5 * (
            loss_tv(proj["zeta_tv1"], proj["q_tv1"], metric)
            + loss_tv(proj["zeta_tv2"], proj["q_tv2"], metric)
        )
    return l_iv, l_tv


def augment_strips(strips, rng, reverse=False, flip=False, p=0.5):
    """Optional strip augmentations, each applied with probability p per strip.

    reverse: time-reverse the strip; flip: negate amplitudes. Off by default
    everywhere; kept for the ablation arm.
    """
    out = np.array(strips, copy=True)
    flat = out.reshape(-1, out.shape[-1])
    for i in range(flat.shape[0]):
        if reverse and rng.random() < p:
            flat[i] = flat[i, ::-1]
        if flip and rng.random() < p:
            flat[i] = -flat[i]
    return out
