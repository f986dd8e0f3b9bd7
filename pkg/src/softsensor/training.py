"""Physics-constrained training of the gain network.

The loss over an observer rollout is::

    total = mse_d + mse_y + reg
    mse_d = mean_k |xhat[k+1] - xhat[k] - dt f_c(xhat[k]) - dt B u[k]|^2
    mse_y = mean_k |y[k] - h(xhat[k])|^2
    reg   = lam * sum_i |W_i|_F^2

Only measured outputs and inputs enter the loss; true states are never read.
Gradients are exact reverse-mode derivatives through the whole recursion.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _accel, gainnet
from .errors import ConfigError, ObserverDiverged, TrainingFailed
from .observer import rollout
from .systems import NoiseSpec, nonnegative as nonnegative_projection, simulate

log = logging.getLogger(__name__)


RESIDUALS = ("step", "rate")

@dataclass(frozen=True)
class LossBreakdown:
    total: float
    mse_d: float
    mse_y: float
    reg: float

    @classmethod
    def from_parts(cls, mse_d, mse_y, reg):
        mse_d, mse_y, reg = float(mse_d), float(mse_y), float(reg)
        return cls(mse_d + mse_y + reg, mse_d, mse_y, reg)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 1e-3
    truncation: int = 0
    seed: int = 0
    residual: str = "step"
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ConfigError("train.epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("train.lr must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if not self.lam >= 0:
            raise ConfigError("train.lambda must be >= 0")
        if int(self.truncation) < 0:
            raise ConfigError("train.truncation must be >= 0")
        if self.residual not in RESIDUALS:
            raise ConfigError(f"train.residual must be one of {RESIDUALS}")


@dataclass
class TrainingDataset:
    trajectories: list
    xhat0: list

    def __post_init__(self):
        if not self.trajectories or len(self.trajectories) != len(self.xhat0):
            raise ConfigError("dataset needs one observer initial state per trajectory")
        first = self.trajectories[0]
        for tr in self.trajectories[1:]:
            if len(tr) != len(first) or not np.array_equal(tr.times, first.times):
                raise ConfigError("all training trajectories must share one time grid")
        self.xhat0 = [np.asarray(x, dtype=float) for x in self.xhat0]

    def __len__(self):
        return len(self.trajectories)

    @property
    def dt(self):
        return self.trajectories[0].dt

    @property
    def horizon(self):
        return float(self.trajectories[0].times[-1])

    def stacked(self):
        """Measured data only: times, inputs ``(B, N+1, p)``, outputs ``(B, N+1, m)``."""
        times = self.trajectories[0].times
        inputs = np.stack([tr.inputs for tr in self.trajectories])
        outputs = np.stack([tr.outputs for tr in self.trajectories])
        return times, inputs, outputs, np.stack(self.xhat0)


def build_dataset(model, x0s, xhat0s, dt, horizon, noise=None, projection=None):
    """Simulate every ``x0`` and pair it with its observer start.

    Trajectory ``i`` draws its noise from seed ``noise.seed + i``.
    """
    x0s = [np.asarray(x, dtype=float) for x in x0s]
    xhat0s = [np.asarray(x, dtype=float) for x in xhat0s]
    if not x0s or len(x0s) != len(xhat0s):
        raise ConfigError("x0 and xhat0 sets must be non-empty and of equal length")
    noise = noise or NoiseSpec()
    trajs = [
        simulate(model, x0, dt, horizon, NoiseSpec(noise.target, noise.stddev_scale, noise.seed + i), projection)
        for i, x0 in enumerate(x0s)
    ]
    return TrainingDataset(trajs, xhat0s)


def sample_pairs(count, seed, n, x_range=(-1.0, 1.0), xhat_range=(-2.0, 2.0)):
    """Uniform initial-condition pairs: ``x0`` in ``x_range^n``, ``xhat0`` in ``xhat_range^n``."""
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(*x_range, size=(count, n))
    xh = rng.uniform(*xhat_range, size=(count, n))
    return list(x0), list(xh)


# --------------------------------------------------------------------------
# loss and gradient


def rollout_loss(params, model, dataset, cfg, lam=0.0, scaling=None, truncation=0,
                 nonnegative=False, want_grad=True, residual="step"):
    """Loss over the observer rollout and its gradient w.r.t. every network array.

    ``residual="step"`` measures the plant-model mismatch of each update as
    ``xhat[k+1] - xhat[k] - dt (f(xhat[k]) + B u[k])``; ``"rate"`` divides it
    by the injection scale so that it equals ``L s + nu`` (the two coincide
    for ``SmcConfig.discrete``). ``truncation > 0`` cuts the backward
    recursion every ``truncation`` steps. Returns ``(LossBreakdown, grads)``;
    ``grads`` is ``None`` if not requested.
    """
    if residual not in RESIDUALS:
        raise ConfigError(f"residual must be one of {RESIDUALS}, got {residual!r}")
    if model.drift_jacobian is None or model.output_jacobian is None:
        raise ConfigError(f"model {model.name!r} has no analytic Jacobians; cannot train")
    scaling = scaling or gainnet.InputScaling(dataset.horizon)
    times, inputs, outputs, xhat0 = dataset.stacked()
    B, N1, m = outputs.shape
    N = N1 - 1
    n = model.n
    dt = dataset.dt

    z = scaling.assemble(np.broadcast_to(times, (B, N1)), inputs, outputs)
    gains, cache = gainnet.forward(params, z)
    proj = nonnegative_projection if nonnegative else None
    ro = rollout(model, gains, outputs, inputs, xhat0, dt, cfg, proj)
    xh, s = ro.xhat, ro.surface

    scale = 1.0 if cfg.discrete else dt
    unit = scale if residual == "rate" else 1.0
    forced = dt * inputs[:, :N] @ model.input_matrix.T
    resid = (xh[:, 1:] - xh[:, :N] - dt * model.drift(xh[:, :N]) - forced) / unit
    ny, nd = B * N1, B * N
    mse_y = np.sum(s * s) / ny
    mse_d = np.sum(resid * resid) / nd
    reg = lam * params.squared_weight_norm()
    loss = LossBreakdown.from_parts(mse_d, mse_y, reg)
    if not want_grad:
        return loss, None

    J = model.drift_jacobian(xh[:, :N])          # (B, N, n, n)
    H = model.output_jacobian(xh)                # (B, N1, m, n)
    G = model.injection

    # direct partial derivatives of the loss w.r.t. each xhat[k]
    direct = -(2.0 / ny) * np.einsum("bkmn,bkm->bkn", H, s)
    wr = (2.0 / nd) * resid / unit
    direct[:, :N] -= wr + dt * np.einsum("bkij,bki->bkj", J, wr)
    direct[:, 1:] += wr

    th = np.tanh(s[:, :N])
    sech2 = 1.0 - th * th
    k_bar = cfg.k0 + cfg.alpha * np.sum(s[:, :N] ** 2, axis=-1)
    mask = (ro.pre >= 0).astype(float) if nonnegative else None

    two_alpha = 2.0 * cfg.alpha
    if _accel.available():
        g_gain = _accel.backward(direct, J, H, gains, s, th, sech2, k_bar, mask, G, dt, scale,
                                 two_alpha, truncation)
    else:
        g_gain = _reverse_recursion(direct, J, H, gains, s, th, sech2, k_bar, mask, G, dt, scale,
                                    two_alpha, truncation)

    grads, _ = gainnet.backward(params, cache, g_gain)
    for i, W in enumerate(params.weights):
        grads[2 * i] = grads[2 * i] + 2.0 * lam * W
    return loss, grads


def _reverse_recursion(direct, J, H, gains, s, th, sech2, k_bar, mask, G, dt, scale, two_alpha,
                       truncation):
    """Adjoint sweep from the last sample back to the first; returns dLoss/dL_k."""
    N = gains.shape[1] - 1
    nonnegative = mask is not None
    g_gain = np.zeros_like(gains)
    a = direct[:, N].copy()
    for k in range(N - 1, -1, -1):
        if truncation and (k + 1) % truncation == 0:
            a = direct[:, k + 1].copy()
        gp = a * mask[:, k] if nonnegative else a
        sk = s[:, k]
        gG = gp @ G                                   # G^T gp, (B, m)
        gs = scale * ((gp[:, None, :] @ gains[:, k])[:, 0]
                      + k_bar[:, k, None] * sech2[:, k] * gG
                      + two_alpha * sk * (th[:, k] * gG).sum(axis=1)[:, None])
        g_gain[:, k] = scale * gp[:, :, None] * sk[:, None, :]
        a = gp + dt * (gp[:, None, :] @ J[:, k])[:, 0] - (gs[:, None, :] @ H[:, k])[:, 0] + direct[:, k]
    return g_gain


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)

    def copy(self):
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.t)


def adam_step(arrays, grads, state, cfg, lr=None):
    """Bias-corrected Adam update; returns new arrays and a new state."""
    if len(arrays) != len(grads) or any(a.shape != g.shape for a, g in zip(arrays, grads)):
        raise ConfigError("gradient shapes do not match parameters")
    lr = cfg.learning_rate if lr is None else lr
    b1, b2 = cfg.beta1, cfg.beta2
    t = state.t + 1
    m = [b1 * mi + (1.0 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1.0 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new = [a - lr * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps) for a, mi, vi in zip(arrays, m, v)]
    return new, AdamState(m, v, t)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    best_params: gainnet.GainNetworkParams
    history: list
    best_epoch: int
    best_loss: float
    scaling: gainnet.InputScaling
    diverged_epochs: list = field(default_factory=list)
    stopped_early: bool = False

    @property
    def best_so_far(self):
        """Running minimum of the total loss, one entry per epoch."""
        return list(np.minimum.accumulate([h.total for h in self.history]))


def train(model, dataset, train_cfg, smc_cfg, init_params, scaling=None, nonnegative=False,
          progress=None):
    """Adam on the rollout loss; keeps the parameters with minimum total loss.

    Each epoch evaluates the loss at the current parameters, records it and
    takes one step. A diverging rollout discards the epoch and halves the
    learning rate once; a second divergence ends training with the best
    parameters so far, or raises :class:`TrainingFailed` if there are none.
    """
    scaling = scaling or gainnet.InputScaling(dataset.horizon)
    params = init_params.copy()
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    lr = train_cfg.learning_rate
    history, diverged = [], []
    best, best_loss, best_epoch = None, np.inf, -1
    halved, stopped = False, False
    prev = None
    epoch = 0
    while epoch < train_cfg.epochs:
        current = params.with_arrays(arrays)
        try:
            loss, grads = rollout_loss(current, model, dataset, smc_cfg, train_cfg.lam, scaling,
                                       train_cfg.truncation, nonnegative,
                                       residual=train_cfg.residual)
        except ObserverDiverged as exc:
            diverged.append(epoch)
            if prev is None or halved:
                if best is None:
                    raise TrainingFailed(epoch, history) from exc
                log.warning("observer diverged at epoch %d (step %d); stopping with best loss %.6g",
                            epoch, exc.step, best_loss)
                stopped = True
                break
            log.warning("observer diverged at epoch %d (step %d); halving learning rate", epoch, exc.step)
            arrays, state = prev
            lr *= 0.5
            halved = True
            continue
        history.append(loss)
        if loss.total < best_loss:
            best, best_loss, best_epoch = current.copy(), loss.total, epoch
        if progress is not None:
            progress(epoch, loss)
        prev = (arrays, state)
        arrays, state = adam_step(arrays, grads, state, train_cfg, lr)
        epoch += 1

    result = TrainResult(best, history, best_epoch, float(best_loss), scaling, diverged, stopped)
    if train_cfg.checkpoint_path:
        gainnet.save_checkpoint(train_cfg.checkpoint_path, best, scaling,
                                extra={"train": {k: v for k, v in asdict(train_cfg).items()
                                                 if k != "checkpoint_path"},
                                       "best_epoch": best_epoch,
                                       "best_loss": float(best_loss)})
    return result


def write_history_csv(path, history):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "total", "mse_d", "mse_y", "reg"])
        for i, h in enumerate(history):
            w.writerow([i, repr(h.total), repr(h.mse_d), repr(h.mse_y), repr(h.reg)])
    return path
