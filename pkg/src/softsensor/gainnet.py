"""Feedforward network mapping ``z = [t, u, y]`` to an ``n x m`` observer gain.

Hidden layers use tanh, the output layer is affine so gains are not capped
at 1. The flat output is read as ``L`` in row-major order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

CHECKPOINT_FORMAT = "softsensor-gainnet"
CHECKPOINT_VERSION = 1


@dataclass
class GainNetworkParams:
    weights: list
    biases: list
    n: int
    m: int
    seed: int | None = None

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ConfigError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigError(f"layer {i} expects {W.shape[1]} inputs, previous layer has {self.weights[i - 1].shape[0]}")
        if self.weights[-1].shape[0] != self.n * self.m:
            raise ConfigError(f"output layer has {self.weights[-1].shape[0]} units, expected n*m = {self.n * self.m}")

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    def num_parameters(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def arrays(self):
        """Parameters in declared order ``W_1, b_1, ..., W_l, b_l``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays):
        return GainNetworkParams(list(arrays[0::2]), list(arrays[1::2]), self.n, self.m, self.seed)

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def squared_weight_norm(self):
        return sum(float(np.sum(W * W)) for W in self.weights)


def xavier_init(dims, n, m, seed=0):
    """Uniform Xavier weights on ``+-sqrt(6 / (fan_in + fan_out))``, zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ConfigError("need at least input and output sizes")
    if min(dims) < 1:
        raise ConfigError(f"layer sizes must be positive: {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return GainNetworkParams(weights, biases, n, m, seed)


def input_dim(p, m):
    return 1 + p + m


def default_dims(n, m, p, hidden=(64, 64)):
    return [input_dim(p, m), *hidden, n * m]


def forward(params, z):
    """Evaluate the network on ``z`` of shape ``(..., input_dim)``.

    Returns ``(L, cache)`` with ``L`` of shape ``(..., n, m)``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.input_dim:
        raise ConfigError(f"input has {z.shape[-1]} features, network expects {params.input_dim}")
    lead = z.shape[:-1]
    a = z.reshape(-1, params.input_dim)
    acts = [a]
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ W.T + b
        if i < last:
            a = np.tanh(a)
        acts.append(a)
    L = a.reshape(lead + (params.n, params.m))
    return L, {"acts": acts, "lead": lead, "dims": params.dims}


def backward(params, cache, dL):
    """Reverse pass. Returns per-layer gradients ``[dW_1, db_1, ...]`` and ``dz``."""
    if cache["dims"] != params.dims:
        raise ConfigError("cache was produced by a network with different dimensions")
    acts = cache["acts"]
    g = np.asarray(dL, dtype=float).reshape(-1, params.n * params.m)
    if g.shape[0] != acts[0].shape[0]:
        raise ConfigError("gradient batch does not match cached forward pass")
    grads = [None] * (2 * len(params.weights))
    for i in range(len(params.weights) - 1, -1, -1):
        W = params.weights[i]
        if i < len(params.weights) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[2 * i] = g.T @ acts[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ W
    dz = g.reshape(cache["lead"] + (params.input_dim,))
    return grads, dz


@dataclass(frozen=True)
class InputScaling:
    """``t`` is divided by ``time_scale`` (the training horizon); u and y enter raw."""

    time_scale: float = 1.0

    def assemble(self, t, u, y):
        t = np.asarray(t, dtype=float)
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        lead = t.shape
        u = u.reshape(lead + (-1,))
        y = y.reshape(lead + (-1,))
        return np.concatenate([(t / self.time_scale)[..., None], u, y], axis=-1)


@dataclass
class NetworkGain:
    """Gain provider backed by a trained network."""

    params: GainNetworkParams
    scaling: InputScaling = field(default_factory=InputScaling)

    def __call__(self, t, u, y):
        L, _ = forward(self.params, self.scaling.assemble(t, u, y))
        return L

    def batch(self, ts, us, ys):
        L, _ = forward(self.params, self.scaling.assemble(ts, us, ys))
        return L


def gain_provider(params, scaling=None):
    return NetworkGain(params, scaling or InputScaling())


# --------------------------------------------------------------------------
# checkpoints


def to_dict(params, scaling=None, extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": params.dims,
        "n": params.n,
        "m": params.m,
        "layout": "row-major",
        "seed": params.seed,
        "time_scale": (scaling or InputScaling()).time_scale,
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    if extra:
        doc["extra"] = extra
    return doc


def from_dict(doc):
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("not a gain network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')!r}")
    if doc.get("layout", "row-major") != "row-major":
        raise ConfigError(f"unsupported gain layout {doc['layout']!r}")
    params = GainNetworkParams(doc["weights"], doc["biases"], doc["n"], doc["m"], doc.get("seed"))
    if params.dims != list(doc["dims"]):
        raise ConfigError("checkpoint dims do not match stored arrays")
    return params, InputScaling(float(doc["time_scale"]))


def save_checkpoint(path, params, scaling=None, extra=None):
    """JSON checkpoint; Python's float repr round-trips doubles exactly."""
    path = Path(path)
    path.write_text(json.dumps(to_dict(params, scaling, extra), indent=1) + "\n")
    return path


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    try:
        params, scaling = from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed checkpoint {path}: {exc!r}") from None
    return params, scaling, doc.get("extra", {})
