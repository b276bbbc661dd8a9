"""Jitted twins of the reference kernels.

Same signatures and arithmetic contract as ``numpy_ref``: per-element math in
float64, one rounding on store. fastmath stays off; reassociation would break
cross-backend agreement.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=False)


@njit(**_JIT)
def layernorm_fwd(x, gamma, beta, eps):
    rows, d = x.shape
    y = np.empty_like(x)
    mean = np.empty(rows, dtype=np.float64)
    rstd = np.empty(rows, dtype=np.float64)
    for r in range(rows):
        acc = 0.0
        for c in range(d):
            acc += np.float64(x[r, c])
        mu = acc / d
        acc = 0.0
        for c in range(d):
            dv = np.float64(x[r, c]) - mu
            acc += dv * dv
        rs = 1.0 / math.sqrt(acc / d + eps)
        mean[r] = mu
        rstd[r] = rs
        for c in range(d):
            xhat = (np.float64(x[r, c]) - mu) * rs
            y[r, c] = xhat * np.float64(gamma[c]) + np.float64(beta[c])
    return y, mean, rstd


@njit(**_JIT)
def layernorm_bwd(dy, x, gamma, mean, rstd):
    rows, d = x.shape
    dx = np.empty_like(x)
    dgamma64 = np.zeros(d, dtype=np.float64)
    dbeta64 = np.zeros(d, dtype=np.float64)
    for r in range(rows):
        mu = mean[r]
        rs = rstd[r]
        m1 = 0.0
        m2 = 0.0
        for c in range(d):
            xhat = (np.float64(x[r, c]) - mu) * rs
            dyv = np.float64(dy[r, c])
            dxh = dyv * np.float64(gamma[c])
            m1 += dxh
            m2 += dxh * xhat
            dgamma64[c] += dyv * xhat
            dbeta64[c] += dyv
        m1 /= d
        m2 /= d
        for c in range(d):
            xhat = (np.float64(x[r, c]) - mu) * rs
            dxh = np.float64(dy[r, c]) * np.float64(gamma[c])
            dx[r, c] = rs * (dxh - m1 - xhat * m2)
    dgamma = dgamma64.astype(x.dtype)
    dbeta = dbeta64.astype(x.dtype)
    return dx, dgamma, dbeta


@njit(**_JIT)
def softmax_fwd(x):
    rows, cols = x.shape
    y = np.empty_like(x)
    e = np.empty(cols, dtype=np.float64)
    for r in range(rows):
        mx = np.float64(x[r, 0])
        for c in range(1, cols):
            v = np.float64(x[r, c])
            if v > mx:
                mx = v
        acc = 0.0
        for c in range(cols):
            ev = math.exp(np.float64(x[r, c]) - mx)
            e[c] = ev
            acc += ev
        for c in range(cols):
            y[r, c] = e[c] / acc
    return y


@njit(**_JIT)
def softmax_bwd(dy, y):
    rows, cols = y.shape
    dx = np.empty_like(y)
    for r in range(rows):
        acc = 0.0
        for c in range(cols):
            acc += np.float64(dy[r, c]) * np.float64(y[r, c])
        for c in range(cols):
            dx[r, c] = np.float64(y[r, c]) * (np.float64(dy[r, c]) - acc)
    return dx


@njit(**_JIT)
def gelu_fwd(x):
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    y = np.empty_like(x)
    for i in range(x.shape[0]):
        v = np.float64(x[i])
        y[i] = 0.5 * v * (1.0 + math.erf(v * inv_sqrt2))
    return y


@njit(**_JIT)
def gelu_bwd(dy, x):
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    inv_sqrt2pi = 1.0 / math.sqrt(2.0 * math.pi)
    dx = np.empty_like(x)
    for i in range(x.shape[0]):
        v = np.float64(x[i])
        cdf = 0.5 * (1.0 + math.erf(v * inv_sqrt2))
        pdf = math.exp(-0.5 * v * v) * inv_sqrt2pi
        dx[i] = np.float64(dy[i]) * (cdf + v * pdf)
    return dx


@njit(**_JIT)
def adam_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i in range(p.shape[0]):
        g64 = np.float64(g[i])
        m64 = beta1 * np.float64(m[i]) + (1.0 - beta1) * g64
        v64 = beta2 * np.float64(v[i]) + (1.0 - beta2) * g64 * g64
        m[i] = m64
        v[i] = v64
        mhat = m64 / bc1
        vhat = v64 / bc2
        p64 = np.float64(p[i])
        p[i] = p64 - lr * (mhat / (math.sqrt(vhat) + eps) + weight_decay * p64)


@njit(**_JIT)
def polyphase_apply(x, phases, up, down, delay, n_out):
    n = x.shape[0]
    t_max = phases.shape[1]
    y = np.zeros(n_out, dtype=np.float64)
    for mo in range(n_out):
        n0 = mo * down + delay
        p = n0 % up
        base = n0 // up
        acc = 0.0
        for t in range(t_max):
            j = base - t
            if 0 <= j < n:
                acc += phases[p, t] * x[j]
        y[mo] = acc
    return y


@njit(**_JIT)
def gauss_accum(sig, centers, amps, sigmas):
    n = sig.shape[0]
    for k in range(centers.shape[0]):
        c = centers[k]
        s = sigmas[k]
        lo = int(math.ceil(c - 4.0 * s))
        hi = int(math.floor(c + 4.0 * s))
        if lo < 0:
            lo = 0
        if hi > n - 1:
            hi = n - 1
        for i in range(lo, hi + 1):
            z = (i - c) / s
            sig[i] += amps[k] * math.exp(-0.5 * z * z)


@njit(**_JIT)
def min_window_var(x, w):
    n = x.shape[0]
    if n < w:
        return np.inf
    c1 = np.empty(n + 1, dtype=np.float64)
    c2 = np.empty(n + 1, dtype=np.float64)
    c1[0] = 0.0
    c2[0] = 0.0
    for i in range(n):
        v = np.float64(x[i])
        c1[i + 1] = c1[i] + v
        c2[i + 1] = c2[i] + v * v
    best = np.inf
    for i in range(n - w + 1):
        s1 = c1[i + w] - c1[i]
        s2 = c2[i + w] - c2[i]
        var = s2 / w - (s1 / w) ** 2
        if var < 0.0:
            var = 0.0
        if var < best:
            best = var
    return best
