"""Observer recursion with a learned gain and an adaptive sliding-mode term.

The estimate evolves as::

    xhat[k+1] = xhat[k] + dt * (f_c(xhat[k]) + B u[k] + L[k] s[k] + nu[k])
    s[k]      = y[k] - h(xhat[k])
    nu[k]     = (k0 + alpha * |s[k]|^2) * G tanh(s[k])

where ``G`` is the model's injection pattern. With ``SmcConfig.discrete``
the two correction terms are added without the ``dt`` factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _accel
from .errors import ConfigError, ObserverDiverged
from .systems import Trajectory, nonnegative

DIVERGENCE_LIMIT = 1e9


@dataclass(frozen=True)
class SmcConfig:
    k0: float = 5.0
    alpha: float = 0.01
    discrete: bool = False

    def __post_init__(self):
        if not self.k0 > 0:
            raise ConfigError("smc.k0 must be > 0")
        if not self.alpha >= 0:
            raise ConfigError("smc.alpha must be >= 0")


@dataclass(frozen=True)
class ObserverState:
    xhat: np.ndarray
    step: int = 0
    last_surface: Optional[np.ndarray] = None
    last_gain: Optional[np.ndarray] = None
    last_smc: Optional[np.ndarray] = None


def sliding_surface(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ConfigError(f"output shapes differ: {y.shape} vs {yhat.shape}")
    return y - yhat


def adaptive_gain(s, cfg):
    """``k0 + alpha * |s|^2`` over the last axis."""
    s = np.asarray(s, dtype=float)
    return cfg.k0 + cfg.alpha * np.sum(s * s, axis=-1)


def smc_correction(s, cfg, injection):
    """Sliding-mode correction lifted into state space.

    Returns ``K * G tanh(s)`` with ``K = k0 + alpha |s|^2``; each component is
    bounded by ``K`` times the number of channels feeding it (one for every
    built-in model). The sign pushes the estimated output toward the
    measurement.
    """
    s = np.asarray(s, dtype=float)
    G = np.asarray(injection, dtype=float)
    k_bar = adaptive_gain(s, cfg)
    return k_bar[..., None] * (np.tanh(s) @ G.T)


def _check_finite(x, step):
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > DIVERGENCE_LIMIT):
        raise ObserverDiverged(step)


_CHECK_EVERY = 64


def _check_history(xhat, start, stop):
    """Locate the first sample in ``xhat[:, start:stop]`` that breaks the guard."""
    block = xhat[:, start:stop]
    with np.errstate(invalid="ignore"):
        bad = ~(np.abs(block) <= DIVERGENCE_LIMIT)
    if bad.any():
        first = int(np.nonzero(bad.any(axis=(0, 2)))[0][0])
        raise ObserverDiverged(start + first)


def observer_step(model, state, gain, y_meas, u, dt, cfg, projection=None):
    """Advance the estimate by one sample."""
    gain = np.asarray(gain, dtype=float)
    if gain.shape != (model.n, model.m):
        raise ConfigError(f"gain must be {model.n}x{model.m}, got {gain.shape}")
    xhat = np.asarray(state.xhat, dtype=float)
    s = sliding_surface(np.asarray(y_meas, dtype=float).reshape(model.m), model.output_map(xhat))
    nu = smc_correction(s, cfg, model.injection)
    correction = gain @ s + nu
    scale = 1.0 if cfg.discrete else dt
    nxt = xhat + dt * model.rate(xhat, u) + scale * correction
    if projection is not None:
        nxt = projection(nxt)
    _check_finite(nxt, state.step + 1)
    return ObserverState(nxt, state.step + 1, s, gain, nu)


@dataclass
class Rollout:
    """Batched observer rollout; arrays carry a leading trajectory axis."""

    xhat: np.ndarray      # (B, N+1, n), projected estimates
    pre: np.ndarray       # (B, N, n), estimates before projection
    surface: np.ndarray   # (B, N+1, m)
    correction: np.ndarray  # (B, N, n), L s + nu


def rollout(model, gains, outputs, inputs, xhat0, dt, cfg, projection=None):
    """Run the recursion for ``B`` trajectories at once.

    ``gains`` has shape ``(B, N+1, n, m)``; the last gain is unused by the
    recursion but kept so every sample carries one. Models with a
    component-form ``rhs`` take the compiled path.
    """
    gains = np.asarray(gains, dtype=float)
    B, N1 = gains.shape[:2]
    N = N1 - 1
    n, m = model.n, model.m
    G = model.injection
    outputs = np.asarray(outputs, dtype=float).reshape(B, N1, m)
    inputs = np.asarray(inputs, dtype=float).reshape(B, N1, model.p)
    scale = 1.0 if cfg.discrete else dt
    forced = np.zeros((B, N1, n))
    if model.p:
        forced = dt * inputs @ model.input_matrix.T

    x = np.asarray(xhat0, dtype=float).reshape(B, n).copy()
    _check_finite(x, 0)
    if (_accel.available() and model.rhs is not None and model.output_matrix is not None
            and projection in (None, nonnegative)):
        xhat, pre, surf, corr, bad = _accel.forward(
            model, gains, outputs, forced, x, dt, scale, cfg.k0, cfg.alpha, projection is not None)
        if bad >= 0:
            raise ObserverDiverged(bad)
        return Rollout(xhat, pre, surf, corr)

    xhat = np.empty((B, N1, n))
    pre = np.empty((B, N, n))
    surf = np.empty((B, N1, m))
    corr = np.empty((B, N, n))
    xhat[:, 0] = x
    GT = np.ascontiguousarray(G.T)
    alpha, k0 = cfg.alpha, cfg.k0
    drift, output_map = model.drift, model.output_map
    checked = 0
    for k in range(N):
        s = outputs[:, k] - output_map(x)
        surf[:, k] = s
        k_bar = k0 + alpha * (s * s).sum(axis=1)
        c = (gains[:, k] @ s[:, :, None])[:, :, 0] + k_bar[:, None] * (np.tanh(s) @ GT)
        corr[:, k] = c
        x = x + dt * drift(x) + forced[:, k] + scale * c
        pre[:, k] = x
        if projection is not None:
            x = projection(x)
        xhat[:, k + 1] = x
        if (k + 1) % _CHECK_EVERY == 0:
            _check_history(xhat, checked, k + 2)
            checked = k + 2
    _check_history(xhat, checked, N1)
    surf[:, N] = outputs[:, N] - output_map(x)
    return Rollout(xhat, pre, surf, corr)


GainProvider = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def gains_along(provider, traj):
    """Evaluate ``provider`` at every sample of ``traj`` -> ``(N+1, n, m)``."""
    batch = getattr(provider, "batch", None)
    if batch is not None:
        return np.asarray(batch(traj.times, traj.inputs, traj.outputs), dtype=float)
    return np.array([provider(t, u, y) for t, u, y in zip(traj.times, traj.inputs, traj.outputs)])


def run_observer(model, traj, gain_provider, xhat0, cfg, projection=None):
    """Replay the observer over measured data; returns the estimate as a Trajectory."""
    xhat0 = np.asarray(xhat0, dtype=float).reshape(model.n)
    if not np.all(np.isfinite(xhat0)):
        raise ConfigError("xhat0 must be finite")
    gains = gains_along(gain_provider, traj)
    if gains.shape != (len(traj), model.n, model.m):
        raise ConfigError(f"gain provider returned shape {gains.shape[1:]}, expected {(model.n, model.m)}")
    ro = rollout(model, gains[None], traj.outputs[None], traj.inputs[None], xhat0[None],
                 traj.dt, cfg, projection)
    xh = ro.xhat[0]
    return Trajectory(traj.times.copy(), xh, model.output_map(xh), traj.inputs.copy())


def constant_gain(L):
    """Gain provider that ignores its arguments."""
    L = np.asarray(L, dtype=float)

    def provider(t, u, y):
        return L

    provider.batch = lambda ts, us, ys: np.broadcast_to(L, (len(ts),) + L.shape)
    return provider
