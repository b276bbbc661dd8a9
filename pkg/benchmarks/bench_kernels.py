"""Benchmark the jitted kernels against the numpy reference path.

Each kernel runs on inputs shaped like what desk-profile training actually
feeds it (batch 32, 3 strips per window, 50 tokens + cls, dim 64), so the
speedups below are the ones the training loop sees. Agreement is reported as
the max absolute difference between the two backends on the same inputs.
Differences at the 1e-16 scale are float64 reassociation (numpy's pairwise
reductions, SIMD exp) in intermediate accumulators; the float32 training
outputs agree bitwise. The table only flags differences above 1e-12.

Run from the repo root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 20 --quick
"""

import argparse
import time

import numpy as np

from plita.kernels import numpy_ref

try:
    from plita.kernels import numba_jit
except ImportError:
    numba_jit = None


def _time(fn, args, repeats):
    # mutating kernels (adam_update, gauss_accum) get fresh copies per call
    fn(*[np.copy(a) if isinstance(a, np.ndarray) else a for a in args])
    best = np.inf
    for _ in range(repeats):
        local = [np.copy(a) if isinstance(a, np.ndarray) else a for a in args]
        t0 = time.perf_counter()
        fn(*local)
        best = min(best, time.perf_counter() - t0)
    return best


def _agreement(ref_fn, jit_fn, args):
    ref_args = [np.copy(a) if isinstance(a, np.ndarray) else a for a in args]
    jit_args = [np.copy(a) if isinstance(a, np.ndarray) else a for a in args]
    out_ref = ref_fn(*ref_args)
    out_jit = jit_fn(*jit_args)
    if out_ref is None:
        # in-place kernel: compare the mutated array arguments
        pairs = [
            (r, j)
            for r, j in zip(ref_args, jit_args)
            if isinstance(r, np.ndarray)
        ]
    elif isinstance(out_ref, tuple):
        pairs = list(zip(out_ref, out_jit))
    else:
        pairs = [(out_ref, out_jit)]
    return max(float(np.max(np.abs(np.asarray(r) - np.asarray(j)))) for r, j in pairs)


def build_cases(rng, quick):
    strips = 96          # batch 32 x 3 strips
    tokens = 51          # 1000 samples / patch 20, plus the cls token
    dim = 64
    heads = 4
    mlp = int(dim * 4.0)

    ln_rows = strips * tokens
    sm_rows = strips * heads * tokens
    if quick:
        ln_rows //= 4
        sm_rows //= 4

    x_ln = rng.standard_normal((ln_rows, dim)).astype(np.float32)
    g_ln = np.ones(dim, dtype=np.float32)
    b_ln = np.zeros(dim, dtype=np.float32)
    dy_ln = rng.standard_normal((ln_rows, dim)).astype(np.float32)
    _, mean, rstd = numpy_ref.layernorm_fwd(x_ln, g_ln, b_ln, 1e-5)

    x_sm = rng.standard_normal((sm_rows, tokens)).astype(np.float32)
    y_sm = numpy_ref.softmax_fwd(x_sm)
    dy_sm = rng.standard_normal((sm_rows, tokens)).astype(np.float32)

    n_gelu = ln_rows * mlp
    x_gelu = rng.standard_normal(n_gelu).astype(np.float32)
    dy_gelu = rng.standard_normal(n_gelu).astype(np.float32)

    n_p = 512 * 512      # largest projector weight
    p = rng.standard_normal(n_p).astype(np.float32)
    g = rng.standard_normal(n_p).astype(np.float32)
    m = np.zeros(n_p, dtype=np.float32)
    v = np.zeros(n_p, dtype=np.float32)

    # 600 s record at 250 Hz down to 100 Hz (up=2, down=5)
    n_sig = 30_000 if quick else 150_000
    sig = rng.standard_normal(n_sig)
    taps = np.hanning(101) * np.sinc(np.linspace(-5, 5, 101))
    up, down = 2, 5
    phases = np.zeros((up, (taps.size + up - 1) // up))
    for i, t in enumerate(taps):
        phases[i % up, i // up] = t
    n_out = (n_sig * up) // down

    n_acc = 30_000 if quick else 150_000
    acc_sig = np.zeros(n_acc)
    n_waves = 3500
    centers = np.sort(rng.uniform(0, n_acc - 1, n_waves))
    amps = rng.uniform(0.1, 1.0, n_waves)
    sigmas = rng.uniform(2.0, 20.0, n_waves)

    x_var = rng.standard_normal(12_000).astype(np.float32)

    return [
        ("layernorm_fwd", f"[{ln_rows},{dim}]", (x_ln, g_ln, b_ln, 1e-5)),
        ("layernorm_bwd", f"[{ln_rows},{dim}]", (dy_ln, x_ln, g_ln, mean, rstd)),
        ("softmax_fwd", f"[{sm_rows},{tokens}]", (x_sm,)),
        ("softmax_bwd", f"[{sm_rows},{tokens}]", (dy_sm, y_sm)),
        ("gelu_fwd", f"[{n_gelu}]", (x_gelu,)),
        ("gelu_bwd", f"[{n_gelu}]", (dy_gelu, x_gelu)),
        ("adam_update", f"[{n_p}]", (p, g, m, v, 10, 1e-3, 0.9, 0.999, 1e-8, 0.01)),
        ("polyphase_apply", f"[{n_sig}] up2/down5", (sig, phases, up, down, 50, n_out)),
        ("gauss_accum", f"[{n_acc}] x {n_waves}", (acc_sig, centers, amps, sigmas)),
        ("min_window_var", "[12000] w=100", (x_var, 100)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7, help="timing repeats, best-of")
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args()

    if numba_jit is None:
        raise SystemExit("numba is not importable; nothing to compare against")

    rng = np.random.default_rng(0)
    cases = build_cases(rng, args.quick)

    header = f"{'kernel':<16} {'shape':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  {'max |diff|':>10}"
    print(header)
    print("-" * len(header))
    for name, shape, call_args in cases:
        ref_fn = getattr(numpy_ref, name)
        jit_fn = getattr(numba_jit, name)
        diff = _agreement(ref_fn, jit_fn, call_args)
        t_ref = _time(ref_fn, call_args, args.repeats)
        t_jit = _time(jit_fn, call_args, args.repeats)
        flag = "" if diff <= 1e-12 else "  <-- disagree"
        print(
            f"{name:<16} {shape:<22} {t_ref * 1e3:>10.3f} {t_jit * 1e3:>10.3f} "
            f"{t_ref / t_jit:>7.1f}x  {diff:>10.3e}{flag}"
        )


if __name__ == "__main__":
    main()
