"""Compiled inner loops for the observer rollout and its reverse pass.

These mirror the numpy implementations in :mod:`softsensor.observer` and
:mod:`softsensor.training` step for step; the numpy versions remain the
reference and are used whenever numba is unavailable, the model lacks a
component-form ``rhs``, or ``SOFTSENSOR_NO_JIT`` is set.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

_LIMIT = 1e9


def available():
    return numba is not None and not os.environ.get("SOFTSENSOR_NO_JIT")


_rhs_cache = {}


def compiled_rhs(rhs):
    fn = _rhs_cache.get(rhs)
    if fn is None:
        fn = _rhs_cache[rhs] = numba.njit(rhs)
    return fn


def _forward(rhs, gains, outputs, forced, x0, C, GT, dt, scale, k0, alpha, nonneg):
    B, N1, n, m = gains.shape
    N = N1 - 1
    xhat = np.empty((B, N1, n))
    pre = np.empty((B, N, n))
    surf = np.empty((B, N1, m))
    corr = np.empty((B, N, n))
    s = np.empty(m)
    x = np.empty(n)
    for b in range(B):
        for i in range(n):
            x[i] = x0[b, i]
            xhat[b, 0, i] = x[i]
        for k in range(N):
            ss = 0.0
            for j in range(m):
                yh = 0.0
                for i in range(n):
                    yh += C[j, i] * x[i]
                s[j] = outputs[b, k, j] - yh
                surf[b, k, j] = s[j]
                ss += s[j] * s[j]
            kb = k0 + alpha * ss
            f = rhs(x)
            bad = False
            for i in range(n):
                c = 0.0
                for j in range(m):
                    c += gains[b, k, i, j] * s[j]
                nu = 0.0
                for j in range(m):
                    nu += GT[j, i] * np.tanh(s[j])
                c += kb * nu
                corr[b, k, i] = c
                v = x[i] + dt * f[i] + forced[b, k, i] + scale * c
                pre[b, k, i] = v
                if nonneg and v < 0.0:
                    v = 0.0
                if not abs(v) <= _LIMIT:
                    bad = True
                xhat[b, k + 1, i] = v
            if bad:
                return xhat, pre, surf, corr, k + 1
            for i in range(n):
                x[i] = xhat[b, k + 1, i]
        for j in range(m):
            yh = 0.0
            for i in range(n):
                yh += C[j, i] * x[i]
            surf[b, N, j] = outputs[b, N, j] - yh
    return xhat, pre, surf, corr, -1


def _backward(direct, J, H, gains, s, th, sech2, kbar, mask, G, dt, scale, two_alpha, truncation, nonneg):
    B, N1, n, m = gains.shape
    N = N1 - 1
    g_gain = np.zeros((B, N1, n, m))
    a = np.empty(n)
    gp = np.empty(n)
    gG = np.empty(m)
    gs = np.empty(m)
    for b in range(B):
        for i in range(n):
            a[i] = direct[b, N, i]
        for k in range(N - 1, -1, -1):
            if truncation > 0 and (k + 1) % truncation == 0:
                for i in range(n):
                    a[i] = direct[b, k + 1, i]
            for i in range(n):
                gp[i] = a[i] * mask[b, k, i] if nonneg else a[i]
            dot = 0.0
            for j in range(m):
                acc = 0.0
                for i in range(n):
                    acc += G[i, j] * gp[i]
                gG[j] = acc
                dot += th[b, k, j] * acc
            for j in range(m):
                acc = 0.0
                for i in range(n):
                    acc += gp[i] * gains[b, k, i, j]
                gs[j] = scale * (acc + kbar[b, k] * sech2[b, k, j] * gG[j]
                                 + two_alpha * s[b, k, j] * dot)
                for i in range(n):
                    g_gain[b, k, i, j] = scale * gp[i] * s[b, k, j]
            for i in range(n):
                acc = 0.0
                for r in range(n):
                    acc += gp[r] * J[b, k, r, i]
                hs = 0.0
                for j in range(m):
                    hs += gs[j] * H[b, k, j, i]
                a[i] = gp[i] + dt * acc - hs + direct[b, k, i]
    return g_gain


if numba is not None:
    _forward = numba.njit(_forward)
    _backward = numba.njit(_backward, cache=True)


def forward(model, gains, outputs, forced, x0, dt, scale, k0, alpha, nonneg):
    rhs = compiled_rhs(model.rhs)
    C = np.ascontiguousarray(model.output_matrix, dtype=float)
    GT = np.ascontiguousarray(model.injection.T, dtype=float)
    return _forward(rhs, np.ascontiguousarray(gains), np.ascontiguousarray(outputs),
                    np.ascontiguousarray(forced), np.ascontiguousarray(x0, dtype=float),
                    C, GT, float(dt), float(scale), float(k0), float(alpha), bool(nonneg))


def backward(direct, J, H, gains, s, th, sech2, kbar, mask, G, dt, scale, two_alpha, truncation):
    nonneg = mask is not None
    if mask is None:
        mask = np.ones((1, 1, 1))
    return _backward(direct, np.ascontiguousarray(J), np.ascontiguousarray(H),
                     np.ascontiguousarray(gains), np.ascontiguousarray(s), th, sech2, kbar,
                     mask, np.ascontiguousarray(G, dtype=float), float(dt), float(scale),
                     float(two_alpha), int(truncation), nonneg)
