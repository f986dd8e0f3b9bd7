"""Benchmark plants, explicit-Euler discretization and trajectory simulation.

Every built-in model is written for arrays of shape ``(..., n)`` so the same
callables serve single states and batches of states during training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, IntegrationDiverged

ArrayFn = Callable[[np.ndarray], np.ndarray]

NOISE_TARGETS = ("measurement", "process", "none")


@dataclass(frozen=True)
class SystemModel:
    """A continuous-time plant ``dx/dt = drift(x) + B u(t)``, ``y = output_map(x)``.

    Unforced benchmarks carry one idle input (``B = 0``, ``u = 0``) so every
    model has ``p >= 1`` and the gain network sees the same ``[t, u, y]``
    layout.

    ``drift_jacobian`` and ``output_jacobian`` are optional analytic
    derivatives (needed for training). ``injection`` is the ``n x m`` 0/1
    pattern that routes each output channel back to the states it measures.
    Models that also carry a component-form ``rhs`` and a linear
    ``output_matrix`` run on the compiled rollout.
    """

    name: str
    n: int
    m: int
    p: int
    drift: ArrayFn
    output_map: ArrayFn
    input_matrix: np.ndarray
    control: Callable[[float], np.ndarray] = None
    drift_jacobian: Optional[ArrayFn] = None
    output_jacobian: Optional[ArrayFn] = None
    injection: Optional[np.ndarray] = None
    singular_pairs: Optional[Callable[[np.ndarray], list]] = None
    params: dict = field(default_factory=dict)
    rhs: Optional[Callable] = None
    output_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.p < 1:
            raise ConfigError(f"invalid dimensions n={self.n}, m={self.m}, p={self.p}")
        B = np.asarray(self.input_matrix, dtype=float).reshape(self.n, self.p)
        object.__setattr__(self, "input_matrix", B)
        if self.control is None:
            zero = np.zeros(self.p)
            object.__setattr__(self, "control", lambda t: zero)
        if self.injection is None:
            object.__setattr__(self, "injection", np.zeros((self.n, self.m)))
        elif np.shape(self.injection) != (self.n, self.m):
            raise ConfigError(f"injection must be {self.n}x{self.m}")

    def with_control(self, control):
        return replace(self, control=control)

    def rate(self, x, u):
        """Continuous-time right-hand side ``f_c(x) + B u``."""
        f = self.drift(x)
        if self.p:
            f = f + np.asarray(u, dtype=float) @ self.input_matrix.T
        return f


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise ``d * N(0, 1)`` attached to the outputs or to the dynamics."""

    target: str = "none"
    stddev_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.target not in NOISE_TARGETS:
            raise ConfigError(f"noise target must be one of {NOISE_TARGETS}, got {self.target!r}")
        if not self.stddev_scale >= 0:
            raise ConfigError("noise stddev_scale must be >= 0")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        N1 = len(self.times)
        if self.outputs.ndim == 1:
            self.outputs = self.outputs.reshape(N1, -1)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(N1, -1)
        for name in ("states", "outputs", "inputs"):
            if getattr(self, name).shape[0] != N1:
                raise ConfigError(f"{name} has {getattr(self, name).shape[0]} rows, expected {N1}")
        if N1 >= 2:
            steps = np.diff(self.times)
            dt = steps[0]
            if dt <= 0 or np.any(np.abs(steps - dt) > 1e-12 * max(1.0, abs(self.times[-1]))):
                raise ConfigError("times must be strictly increasing with a constant step")

    def __len__(self):
        return len(self.times)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.outputs.shape[1]

    @property
    def p(self):
        return self.inputs.shape[1]


# --------------------------------------------------------------------------
# integration


def step_count(dt, horizon):
    """Number of Euler steps covering ``horizon``; rejects non-integer ratios."""
    if not dt > 0 or not horizon > 0:
        raise ConfigError(f"dt and horizon must be positive (dt={dt}, horizon={horizon})")
    ratio = horizon / dt
    N = int(round(ratio))
    if N < 1 or abs(ratio - N) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"horizon/dt = {ratio!r} is not an integer")
    return N


def euler_step(model, x, u, dt, step=0):
    """One explicit Euler step ``x + dt (f_c(x) + B u)``."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    x = np.asarray(x, dtype=float)
    out = x + dt * model.rate(x, u)
    if not np.all(np.isfinite(out)):
        raise IntegrationDiverged(step)
    return out


def _measure(model, states, noise, rng):
    outputs = model.output_map(states)
    if noise.target == "measurement" and noise.stddev_scale > 0:
        outputs = outputs + noise.stddev_scale * rng.standard_normal(outputs.shape)
    return outputs


def simulate(model, x0, dt, horizon, noise=None, projection=None):
    """Roll the Euler map from ``x0`` over ``[0, horizon]``.

    Measurement noise draws one ``m``-vector per sample after the state
    rollout; process noise draws one ``n``-vector per step, entering as
    ``dt * d * w_k``. ``projection`` (if given) is applied after every step.
    """
    noise = noise or NoiseSpec()
    N = step_count(dt, horizon)
    rng = np.random.default_rng(noise.seed)
    times = np.arange(N + 1) * dt
    inputs = np.array([np.asarray(model.control(t), dtype=float).reshape(model.p) for t in times])
    inputs = inputs.reshape(N + 1, model.p)
    states = np.empty((N + 1, model.n))
    x = np.asarray(x0, dtype=float).reshape(model.n)
    if not np.all(np.isfinite(x)):
        raise ConfigError("x0 must be finite")
    process = noise.target == "process" and noise.stddev_scale > 0
    states[0] = x
    for k in range(N):
        x = x + dt * model.rate(x, inputs[k])
        if process:
            x = x + dt * noise.stddev_scale * rng.standard_normal(model.n)
        if projection is not None:
            x = projection(x)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(k)
        states[k + 1] = x
    outputs = _measure(model, states, noise, rng)
    return Trajectory(times, states, outputs, inputs)


def rk4_reference(model, x0, dt, horizon):
    """Classical fixed-step RK4 solution with the input held over each step."""
    N = step_count(dt, horizon)
    times = np.arange(N + 1) * dt
    inputs = np.array([np.asarray(model.control(t), dtype=float).reshape(model.p) for t in times])
    inputs = inputs.reshape(N + 1, model.p)
    states = np.empty((N + 1, model.n))
    x = np.asarray(x0, dtype=float).reshape(model.n)
    states[0] = x
    for k in range(N):
        u = inputs[k]
        k1 = model.rate(x, u)
        k2 = model.rate(x + 0.5 * dt * k1, u)
        k3 = model.rate(x + 0.5 * dt * k2, u)
        k4 = model.rate(x + dt * k3, u)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(k)
        states[k + 1] = x
    return Trajectory(times, states, model.output_map(states), inputs)


def nonnegative(x):
    """Componentwise ``max(x, 0)``; used for tank levels."""
    return np.maximum(x, 0.0)


def square_wave_control(u_min, u_max, f):
    """``u_max`` while ``sin(5 pi f t) > 0``, ``u_min`` otherwise."""
    if not f > 0:
        raise ConfigError("square wave frequency must be positive")
    lo = np.atleast_1d(np.asarray(u_min, dtype=float))
    hi = np.atleast_1d(np.asarray(u_max, dtype=float))
    if lo.shape != hi.shape:
        raise ConfigError("u_min and u_max must have the same shape")
    omega = 5.0 * math.pi * f

    def control(t):
        return hi if math.sin(omega * t) > 0 else lo

    return control


# --------------------------------------------------------------------------
# benchmark models
#
# Each model's right-hand side is written once, in component form
# ``rhs(x) -> tuple`` indexing ``x[0], x[1], ...``. Called with ``x`` of
# shape ``(n, ...)`` it broadcasts over numpy arrays; called with a 1-D
# state it compiles under numba for the accelerated rollout.


def _stack(*cols):
    out = np.empty(np.broadcast(*cols).shape + (len(cols),))
    for i, c in enumerate(cols):
        out[..., i] = c
    return out


def _rows(*rows):
    return np.stack([_stack(*r) for r in rows], axis=-2)


def vectorize_rhs(rhs):
    """Wrap a component-form ``rhs`` into ``drift(x)`` for ``x`` of shape ``(..., n)``."""

    def drift(x):
        x = np.asarray(x, dtype=float)
        return _stack(*rhs(np.moveaxis(x, -1, 0)))

    return drift


def _linear_output(C):
    C = np.asarray(C, dtype=float)

    def output_map(x):
        return np.asarray(x) @ C.T

    def output_jacobian(x):
        x = np.asarray(x)
        return np.broadcast_to(C, x.shape[:-1] + C.shape).copy()

    return output_map, output_jacobian


def _model(name, n, rhs, jac, C, B=None, p=1, **kw):
    C = np.asarray(C, dtype=float)
    out, out_jac = _linear_output(C)
    B = np.zeros((n, p)) if B is None else B
    return SystemModel(
        name=name, n=n, m=len(C), p=p, drift=vectorize_rhs(rhs), output_map=out, input_matrix=B,
        drift_jacobian=jac, output_jacobian=out_jac, injection=(C != 0).astype(float).T,
        rhs=rhs, output_matrix=C, **kw,
    )


def rossler(a=0.2, b=0.2, c=5.7):
    def rhs(x):
        return (-x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c))

    def jac(x):
        x1, x3 = x[..., 0], x[..., 2]
        z, o = np.zeros_like(x1), np.ones_like(x1)
        return _rows((z, -o, -o), (o, a * o, z), (x3, z, x1 - c))

    return _model("rossler", 3, rhs, jac, [[0, 1, 0]], params=dict(a=a, b=b, c=c))


def harmonic():
    def rhs(x):
        return (x[1], -x[2] * x[0], 0.0 * x[2])

    def jac(x):
        x1, x3 = x[..., 0], x[..., 2]
        z, o = np.zeros_like(x1), np.ones_like(x1)
        return _rows((z, o, z), (-x3, z, -x1), (z, z, z))

    return _model("harmonic", 3, rhs, jac, [[1, 0, 0]])


def double_integrator():
    """``dx1/dt = x2``, ``dx2/dt = 0``, ``y = x1``; a linear sanity case."""
    def rhs(x):
        return (x[1], 0.0 * x[1])

    def jac(x):
        z = np.zeros_like(x[..., 0])
        return _rows((z, z + 1.0), (z, z))

    return _model("double_integrator", 2, rhs, jac, [[1, 0]])


def _autonomous_rhs(x):
    return (x[1] + np.sin(x[0]), -x[0] + np.cos(x[1]))


def _autonomous_jac(x):
    x1, x2 = x[..., 0], x[..., 1]
    o = np.ones_like(x1)
    return _rows((np.cos(x1), o), (-o, -np.sin(x2)))


def _academic_rhs(x):
    r = np.sqrt(1.0 + x[0] * x[0])
    return (x[1] * r, -x[0] * x[1] * x[1] / r)


def _academic_jac(x):
    x1, x2 = x[..., 0], x[..., 1]
    r = np.sqrt(1.0 + x1 * x1)
    return _rows((x1 * x2 / r, r), (-x2 * x2 / r**3, -2.0 * x1 * x2 / r))


def academic_mod():
    def rhs(x):
        r = np.sqrt(1.0 + x[1] * x[1])
        return (x[1] * r, -x[0] * x[1] * x[1] / r)

    def jac(x):
        x1, x2 = x[..., 0], x[..., 1]
        q = 1.0 + x2 * x2
        r = np.sqrt(q)
        return _rows(
            (np.zeros_like(x1), (1.0 + 2.0 * x2 * x2) / r),
            (-x2 * x2 / r, -x1 * x2 * (2.0 + x2 * x2) / (q * r)),
        )

    return _model("academic_mod", 2, rhs, jac, [[1, 0]])


def reverse_duffing():
    def rhs(x):
        return (x[1] * x[1] * x[1], -x[0])

    def jac(x):
        x1, x2 = x[..., 0], x[..., 1]
        z = np.zeros_like(x1)
        return _rows((z, 3.0 * x2 * x2), (-np.ones_like(x1), z))

    return _model("reverse_duffing", 2, rhs, jac, [[1, 0]])


# Representative constants; the levels are dimensionless and the time scale
# is chosen so the tanks drain within a ten-second horizon.
THREE_TANK_DEFAULTS = dict(
    S_T=1.0,
    S_p=0.1,
    gamma=(0.8, 0.6, 0.7),
    g=9.81,
)


def signed_root(r):
    """``sign(r) * sqrt(|r|)`` with ``sign(0) = 0``."""
    return np.sign(r) * np.sqrt(np.abs(r))


def signed_root_slope(r):
    """Derivative of :func:`signed_root`, defined as 0 on the singular point."""
    a = np.abs(r)
    safe = np.where(a > 0, a, 1.0)
    return np.where(a > 0, 0.5 / np.sqrt(safe), 0.0)


def three_tank(S_T=None, S_p=None, gamma=None, g=None):
    """Three coupled tanks, pumps feeding tanks 1 and 3, level of tank 2 measured.

    The outflow of tank 3 uses ``signed_root(x3)``, which equals ``sqrt(x3)``
    for physical (non-negative) levels and stays finite otherwise.
    """
    d = THREE_TANK_DEFAULTS
    S_T = d["S_T"] if S_T is None else S_T
    S_p = d["S_p"] if S_p is None else S_p
    gamma = tuple(d["gamma"] if gamma is None else gamma)
    g = d["g"] if g is None else g
    b1, b2, b3 = (gz * S_p * math.sqrt(2.0 * g) / S_T for gz in gamma)

    def rhs(x):
        d12 = x[0] - x[1]
        d23 = x[1] - x[2]
        q12 = b1 * np.sign(d12) * np.sqrt(np.abs(d12))
        q23 = b2 * np.sign(d23) * np.sqrt(np.abs(d23))
        q3 = b3 * np.sign(x[2]) * np.sqrt(np.abs(x[2]))
        return (-q12, q12 - q23, q23 - q3)

    def jac(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        d1 = b1 * signed_root_slope(x1 - x2)
        d2 = b2 * signed_root_slope(x2 - x3)
        d3 = b3 * signed_root_slope(x3)
        z = np.zeros_like(x1)
        return _rows((-d1, d1, z), (d1, -d1 - d2, d2), (z, d2, -d2 - d3))

    def singular_pairs(x):
        x = np.asarray(x, dtype=float)
        hits = [(i, j) for i, j in ((0, 1), (1, 2)) if x[i] == x[j]]
        if x[2] == 0:
            hits.append((2, 2))
        return hits

    B = np.array([[1.0 / S_T, 0.0], [0.0, 0.0], [0.0, 1.0 / S_T]])
    params = dict(S_T=S_T, S_p=S_p, gamma=gamma, g=g, beta=(b1, b2, b3))
    return _model("three_tank", 3, rhs, jac, [[0, 1, 0]], B=B, p=2,
                  singular_pairs=singular_pairs, params=params)


_BUILTINS = {
    "rossler": rossler,
    "harmonic": harmonic,
    "autonomous": lambda: _model("autonomous", 2, _autonomous_rhs, _autonomous_jac, [[1, 0]]),
    "autonomous_sum": lambda: _model("autonomous_sum", 2, _autonomous_rhs, _autonomous_jac, [[1, 1]]),
    "academic": lambda: _model("academic", 2, _academic_rhs, _academic_jac, [[1, 0]]),
    "academic_sum": lambda: _model("academic_sum", 2, _academic_rhs, _academic_jac, [[1, 1]]),
    "academic_mod": academic_mod,
    "three_tank": three_tank,
    "reverse_duffing": reverse_duffing,
    "double_integrator": double_integrator,
}

MODEL_NAMES = tuple(_BUILTINS)


def builtin_model(name, **params):
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}") from None
    return factory(**params)


# --------------------------------------------------------------------------
# CSV


def trajectory_header(n, m, p, state_prefix="x"):
    return (["t"] + [f"{state_prefix}{i + 1}" for i in range(n)]
            + [f"y{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(p)])


def write_trajectory_csv(path, traj, state_prefix="x"):
    """Write ``t,x1..xn,y1..ym,u1..up`` with shortest round-trip floats."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(traj.n, traj.m, traj.p, state_prefix))
        for row in np.column_stack([traj.times, traj.states, traj.outputs, traj.inputs]):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_trajectory_csv(path, state_prefix="x"):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    n = sum(1 for h in header if h.startswith(state_prefix) and h[len(state_prefix):].isdigit())
    m = sum(1 for h in header if h.startswith("y"))
    body = body.reshape(len(rows) - 1, len(header))
    return Trajectory(body[:, 0], body[:, 1:1 + n], body[:, 1 + n:1 + n + m], body[:, 1 + n + m:])


def as_array(values: Sequence[float], size, name):
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ConfigError(f"{name} must have {size} entries, got {arr.size}")
    return arr
