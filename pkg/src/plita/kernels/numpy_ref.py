"""Reference implementations of the hot kernels, pure numpy.

Every function here has a jitted twin in ``numba_jit`` with the same
signature and semantics; the twins are tested against each other. Shapes are
canonical: row-wise kernels take 2-d arrays, elementwise kernels take 1-d,
callers reshape.

Arithmetic contract shared with the twins: math runs in float64 and rounds
once on store to the input dtype. Where no reduction-order ambiguity exists
(Adam, the resampler, the window-variance scan) the twins agree bitwise; the
reduction kernels agree to a few ulp because numpy sums pairwise.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def layernorm_fwd(x, gamma, beta, eps):
    """x [R, D] -> (y [R, D], mean [R], rstd [R]); mean/rstd are float64."""
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=1)
    var = np.square(x64 - mean[:, None]).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mean[:, None]) * rstd[:, None]
    y = (xhat * gamma.astype(np.float64) + beta.astype(np.float64)).astype(x.dtype)
    return y, mean, rstd


def layernorm_bwd(dy, x, gamma, mean, rstd):
    """Returns (dx [R, D], dgamma [D], dbeta [D])."""
    x64 = x.astype(np.float64)
    dy64 = dy.astype(np.float64)
    xhat = (x64 - mean[:, None]) * rstd[:, None]
    dbeta = dy64.sum(axis=0).astype(x.dtype)
    dgamma = (dy64 * xhat).sum(axis=0).astype(x.dtype)
    dxhat = dy64 * gamma.astype(np.float64)
    m1 = dxhat.mean(axis=1)[:, None]
    m2 = (dxhat * xhat).mean(axis=1)[:, None]
    dx = (rstd[:, None] * (dxhat - m1 - xhat * m2)).astype(x.dtype)
    return dx, dgamma, dbeta


def softmax_fwd(x):
    """Row softmax, x [R, C]."""
    x64 = x.astype(np.float64)
    e = np.exp(x64 - x64.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)).astype(x.dtype)


def softmax_bwd(dy, y):
    dy64 = dy.astype(np.float64)
    y64 = y.astype(np.float64)
    inner = (dy64 * y64).sum(axis=1, keepdims=True)
    return (y64 * (dy64 - inner)).astype(y.dtype)


def gelu_fwd(x):
    """Exact (erf-based) GELU, elementwise on a 1-d array."""
    x64 = x.astype(np.float64)
    return (0.5 * x64 * (1.0 + erf(x64 * _INV_SQRT2))).astype(x.dtype)


def gelu_bwd(dy, x):
    x64 = x.astype(np.float64)
    cdf = 0.5 * (1.0 + erf(x64 * _INV_SQRT2))
    pdf = np.exp(-0.5 * x64 * x64) * _INV_SQRT2PI
    return (dy.astype(np.float64) * (cdf + x64 * pdf)).astype(x.dtype)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place on flat arrays."""
    g64 = g.astype(np.float64)
    m64 = beta1 * m.astype(np.float64) + (1.0 - beta1) * g64
    v64 = beta2 * v.astype(np.float64) + (1.0 - beta2) * g64 * g64
    m[:] = m64.astype(m.dtype)
    v[:] = v64.astype(v.dtype)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    mhat = m64 / bc1
    vhat = v64 / bc2
    p64 = p.astype(np.float64)
    step = lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p64)
    p[:] = (p64 - step).astype(p.dtype)


def polyphase_apply(x, phases, up, down, delay, n_out):
    """Polyphase rational resample of 1-d float64 x.

    phases[p, t] holds filter tap h[p + up*t]; output sample m reads the
    virtual upsampled-and-filtered stream at index m*down + delay.
    """
    n = x.shape[0]
    t_max = phases.shape[1]
    n0 = np.arange(n_out, dtype=np.int64) * down + delay
    ph = (n0 % up).astype(np.int64)
    base = n0 // up
    y = np.zeros(n_out, dtype=np.float64)
    for t in range(t_max):
        j = base - t
        ok = (j >= 0) & (j < n)
        y[ok] += phases[ph[ok], t] * x[j[ok]]
    return y


def gauss_accum(sig, centers, amps, sigmas):
    """Add Gaussian bumps to float64 sig in place; centers/sigmas in samples."""
    n = sig.shape[0]
    for k in range(centers.shape[0]):
        c = centers[k]
        s = sigmas[k]
        lo = max(0, int(np.ceil(c - 4.0 * s)))
        hi = min(n - 1, int(np.floor(c + 4.0 * s)))
        if hi < lo:
            continue
        i = np.arange(lo, hi + 1)
        z = (i - c) / s
        sig[lo : hi + 1] += amps[k] * np.exp(-0.5 * z * z)


def min_window_var(x, w):
    """Minimum population variance over all length-w sliding windows of x."""
    n = x.shape[0]
    if n < w:
        return np.inf
    x64 = x.astype(np.float64)
    c1 = np.concatenate(([0.0], np.cumsum(x64)))
    c2 = np.concatenate(([0.0], np.cumsum(x64 * x64)))
    s1 = c1[w:] - c1[:-w]
    s2 = c2[w:] - c2[:-w]
    var = s2 / w - (s1 / w) ** 2
    return float(np.maximum(var, 0.0).min())
