"""Experiment configuration: a flat ``key = value`` format with dotted sections, plus presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .observer import SmcConfig
from .systems import MODEL_NAMES, NOISE_TARGETS, NoiseSpec, builtin_model, nonnegative, square_wave_control
from .training import TrainConfig, sample_pairs


def parse_value(raw):
    """JSON scalars and lists; ``true``/``false``/``none`` in any case; anything else stays a string."""
    text = raw.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.lower() in ("none", "null"):
        return None
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_flat(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment. Values are JSON or bare words."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def format_flat(values):
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, str):
            lines.append(f"{key} = {v}")
        else:
            lines.append(f"{key} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"


def load_config_file(path):
    path = Path(path)
    return parse_flat(path.read_text(), str(path))


# flat key -> (attribute, converter)
def _vecs(v):
    if v is None:
        return None
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2:
        raise ConfigError("initial conditions must be a vector or a list of vectors")
    return [list(map(float, row)) for row in arr]


def _pair(v):
    lo, hi = (float(a) for a in v)
    if not lo < hi:
        raise ConfigError(f"range {v} must satisfy low < high")
    return [lo, hi]


def _floats(v):
    return [float(a) for a in np.atleast_1d(np.asarray(v, dtype=float))]


_KEYS = {
    "name": ("name", str),
    "model": ("model", str),
    "data.x0": ("x0", _vecs),
    "data.xhat0": ("xhat0", _vecs),
    "data.count": ("count", int),
    "data.x_range": ("x_range", _pair),
    "data.xhat_range": ("xhat_range", _pair),
    "data.sample_seed": ("sample_seed", int),
    "data.dt": ("dt", float),
    "data.horizon": ("horizon", float),
    "noise.target": ("noise_target", str),
    "noise.scale": ("noise_scale", float),
    "noise.seed": ("noise_seed", int),
    "control.kind": ("control_kind", str),
    "control.u_min": ("u_min", _floats),
    "control.u_max": ("u_max", _floats),
    "control.freq": ("control_freq", float),
    "observer.projection": ("projection", bool),
    "smc.k0": ("k0", float),
    "smc.alpha": ("alpha", float),
    "train.epochs": ("epochs", int),
    "train.lr": ("lr", float),
    "train.lambda": ("lam", float),
    "train.seed": ("seed", int),
    "train.truncation": ("truncation", int),
    "train.residual": ("residual", str),
    "train.hidden": ("hidden", lambda v: [int(a) for a in v]),
    "test.x0": ("test_x0", _vecs),
    "test.xhat0": ("test_xhat0", _vecs),
    "test.count": ("test_count", int),
    "test.sample_seed": ("test_sample_seed", int),
    "test.horizon": ("test_horizon", float),
    "test.noise_seed": ("test_noise_seed", int),
    "test.burn_in": ("burn_in", float),
    "test.threshold": ("threshold", float),
    "test.dwell": ("dwell", float),
    "diagnose.point": ("diag_point", _floats),
    "diagnose.horizon": ("diag_horizon", int),
    "out.dir": ("out_dir", str),
}
_ATTR_TO_KEY = {attr: key for key, (attr, _) in _KEYS.items()}
REQUIRED = ("model", "data.dt", "data.horizon")


@dataclass
class ExperimentConfig:
    model: str
    dt: float
    horizon: float
    name: str = "custom"
    model_params: dict = field(default_factory=dict)
    x0: Optional[list] = None
    xhat0: Optional[list] = None
    count: int = 0
    x_range: list = field(default_factory=lambda: [-1.0, 1.0])
    xhat_range: list = field(default_factory=lambda: [-2.0, 2.0])
    sample_seed: int = 0
    noise_target: str = "none"
    noise_scale: float = 0.0
    noise_seed: int = 0
    control_kind: str = "zero"
    u_min: list = field(default_factory=lambda: [0.0])
    u_max: list = field(default_factory=lambda: [0.0])
    control_freq: float = 0.1
    projection: bool = False
    k0: float = 5.0
    alpha: float = 0.01
    epochs: int = 200
    lr: float = 1e-3
    lam: float = 1e-3
    seed: int = 0
    truncation: int = 0
    residual: str = "step"
    hidden: list = field(default_factory=lambda: [64, 64])
    test_x0: Optional[list] = None
    test_xhat0: Optional[list] = None
    test_count: int = 0
    test_sample_seed: int = 1
    test_horizon: Optional[float] = None
    test_noise_seed: Optional[int] = None
    burn_in: Optional[float] = None
    threshold: float = 1e-2
    dwell: float = 1.0
    diag_point: Optional[list] = None
    diag_horizon: int = 2
    out_dir: str = "runs"

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"model: unknown model {self.model!r}; choose from {', '.join(MODEL_NAMES)}")
        if not self.dt > 0 or not self.horizon > 0:
            raise ConfigError("data.dt and data.horizon must be > 0")
        if self.x0 is None and self.count <= 0:
            raise ConfigError("missing key data.x0 (or data.count for sampled initial conditions)")
        if self.x0 is not None and self.xhat0 is None:
            raise ConfigError("missing key data.xhat0")
        if self.x0 is not None and len(self.x0) != len(self.xhat0):
            raise ConfigError("data.x0 and data.xhat0 must list the same number of vectors")
        if self.noise_target not in NOISE_TARGETS:
            raise ConfigError(f"noise.target must be one of {NOISE_TARGETS}")
        if self.control_kind not in ("zero", "square"):
            raise ConfigError("control.kind must be 'zero' or 'square'")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        n = self.build_model().n
        for key in ("x0", "xhat0", "test_x0", "test_xhat0"):
            vecs = getattr(self, key)
            if vecs is not None and any(len(v) != n for v in vecs):
                raise ConfigError(f"{_ATTR_TO_KEY[key]}: vectors must have {n} entries")
        # fail early on the values the library validates itself
        self.smc()
        self.train_config()
        self.noise()

    # ---- conversion -----------------------------------------------------

    @classmethod
    def from_flat(cls, values):
        kw, params = {}, {}
        for key, value in values.items():
            if key.startswith("model."):
                params[key[len("model."):]] = value
                continue
            if key not in _KEYS:
                raise ConfigError(f"unknown key {key!r}")
            attr, conv = _KEYS[key]
            try:
                kw[attr] = conv(value) if value is not None else None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: cannot use value {value!r} ({exc})") from None
        for key in REQUIRED:
            if _KEYS[key][0] not in kw:
                raise ConfigError(f"missing required key {key!r}")
        return cls(model_params=params, **kw)

    def to_flat(self):
        out = {}
        for f in fields(self):
            if f.name == "model_params":
                continue
            v = getattr(self, f.name)
            if v is not None:
                out[_ATTR_TO_KEY[f.name]] = v
        for k, v in self.model_params.items():
            out[f"model.{k}"] = v
        return out

    def with_overrides(self, **values):
        flat = self.to_flat()
        flat.update({k: v for k, v in values.items() if v is not None})
        return ExperimentConfig.from_flat(flat)

    # ---- library objects ------------------------------------------------

    def build_model(self):
        model = builtin_model(self.model, **self.model_params)
        if self.control_kind == "square":
            u_min = np.resize(np.asarray(self.u_min, dtype=float), model.p)
            u_max = np.resize(np.asarray(self.u_max, dtype=float), model.p)
            model = model.with_control(square_wave_control(u_min, u_max, self.control_freq))
        return model

    def projection_fn(self):
        return nonnegative if self.projection else None

    def smc(self):
        return SmcConfig(self.k0, self.alpha)

    def train_config(self, checkpoint_path=None):
        return TrainConfig(epochs=self.epochs, learning_rate=self.lr, lam=self.lam,
                           truncation=self.truncation, seed=self.seed, residual=self.residual,
                           checkpoint_path=checkpoint_path)

    def noise(self, seed=None):
        if self.noise_target == "none" or self.noise_scale == 0:
            return NoiseSpec("none", 0.0, 0)
        return NoiseSpec(self.noise_target, self.noise_scale, self.noise_seed if seed is None else seed)

    def test_noise(self):
        seed = self.test_noise_seed if self.test_noise_seed is not None else self.noise_seed + 1000
        return self.noise(seed)

    def training_pairs(self):
        if self.x0 is not None:
            return self.x0, self.xhat0
        n = self.build_model().n
        return sample_pairs(self.count, self.sample_seed, n, tuple(self.x_range), tuple(self.xhat_range))

    def test_pairs(self):
        if self.test_x0 is not None:
            xh = self.test_xhat0 or self.training_pairs()[1][:1] * len(self.test_x0)
            return self.test_x0, xh
        if self.test_count > 0:
            n = self.build_model().n
            return sample_pairs(self.test_count, self.test_sample_seed, n,
                                tuple(self.x_range), tuple(self.xhat_range))
        return self.training_pairs()

    @property
    def test_T(self):
        return self.test_horizon if self.test_horizon is not None else self.horizon

    @property
    def test_burn_in(self):
        return self.burn_in if self.burn_in is not None else 0.0


# --------------------------------------------------------------------------
# presets

_COMMON = {"smc.k0": 5.0, "smc.alpha": 0.01, "train.lambda": 1e-3, "train.hidden": [64, 64]}

_PRESETS = {
    "ex1": {
        "model": "rossler", "data.dt": 0.001, "data.horizon": 10.0,
        "data.x0": [1, 1, 1], "data.xhat0": [0, 1, 2],
        "noise.target": "measurement", "noise.scale": 0.01, "noise.seed": 0,
        "train.epochs": 1000, "train.lr": 1e-3,
        "test.x0": [-4, 5, 4], "test.xhat0": [0, 1, 2], "test.horizon": 20.0, "test.burn_in": 10.0,
    },
    "ex2": {
        "model": "harmonic", "data.dt": 0.01, "data.horizon": 10.0,
        "data.x0": [2, -1, 3], "data.xhat0": [1, 1, 2],
        "train.epochs": 1000, "train.lr": 1e-2, "train.residual": "rate",
        "test.horizon": 20.0, "test.burn_in": 10.0,
    },
    "ex3": {
        "model": "autonomous", "data.dt": 0.01, "data.horizon": 10.0,
        "data.x0": [1, 1], "data.xhat0": [1, 2],
        "train.epochs": 1000, "train.lr": 1e-2, "train.residual": "rate",
        "test.burn_in": 5.0,
    },
    "ex3_sum": {
        "model": "autonomous_sum", "data.dt": 0.01, "data.horizon": 10.0,
        "data.x0": [1, 1], "data.xhat0": [1, 2],
        "train.epochs": 1000, "train.lr": 3e-3, "train.residual": "rate",
        "test.burn_in": 5.0,
    },
    "ex4": {
        "model": "academic_sum", "data.dt": 0.01, "data.horizon": 10.0,
        "data.x0": [0.5, 0.5], "data.xhat0": [0.0, 0.0],
        "train.epochs": 1000, "train.lr": 1e-2,
        "test.burn_in": 5.0,
    },
    "ex4_x1": {
        "model": "academic", "data.dt": 0.01, "data.horizon": 10.0,
        "data.x0": [0.5, 0.5], "data.xhat0": [0.0, 0.0],
        "train.epochs": 1000, "train.lr": 1e-3,
        "test.burn_in": 5.0,
    },
    "ex5": {
        "model": "academic_mod", "data.dt": 0.01, "data.horizon": 10.0,
        "data.x0": [0.5, 0.5], "data.xhat0": [0.0, 0.0],
        "train.epochs": 1000, "train.lr": 1e-2,
        "test.burn_in": 5.0,
    },
    "ex6": {
        "model": "three_tank", "data.dt": 0.01, "data.horizon": 20.0,
        "data.x0": [0.6, 0.4, 0.2], "data.xhat0": [0.3, 0.2, 0.5],
        "train.epochs": 500, "train.lr": 1e-3,
        "test.burn_in": 10.0,
    },
    "ex6_square": {
        "model": "three_tank", "data.dt": 0.01, "data.horizon": 20.0,
        "data.x0": [0.6, 0.4, 0.2], "data.xhat0": [0.3, 0.2, 0.5],
        "control.kind": "square", "control.u_min": [0.0, 0.0], "control.u_max": [0.2, 0.2],
        "control.freq": 0.1, "observer.projection": True,
        "train.epochs": 500, "train.lr": 1e-3,
        "test.burn_in": 10.0,
    },
    "ex7": {
        "model": "reverse_duffing", "data.dt": 0.01, "data.horizon": 10.0,
        "data.count": 25, "data.sample_seed": 0,
        "data.x_range": [-1, 1], "data.xhat_range": [-2, 2],
        "train.epochs": 300, "train.lr": 1e-3,
        "test.count": 25, "test.sample_seed": 1, "test.horizon": 40.0, "test.burn_in": 20.0,
    },
    "ex7_noise": {
        "model": "reverse_duffing", "data.dt": 0.01, "data.horizon": 10.0,
        "data.count": 25, "data.sample_seed": 0,
        "data.x_range": [-1, 1], "data.xhat_range": [-2, 2],
        "noise.target": "measurement", "noise.scale": 0.01, "noise.seed": 0,
        "train.epochs": 300, "train.lr": 1e-3,
        "test.count": 25, "test.sample_seed": 1, "test.horizon": 40.0, "test.burn_in": 20.0,
    },
    "linear_pair": {
        "model": "double_integrator", "data.dt": 0.01, "data.horizon": 1.0,
        "data.x0": [1, 0.5], "data.xhat0": [0, 0],
        "diagnose.point": [1, 0.5], "diagnose.horizon": 1,
        "train.epochs": 10,
    },
}

PRESET_NAMES = tuple(_PRESETS)


def preset_values(name):
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    values = dict(_COMMON)
    values.update(_PRESETS[name])
    values["name"] = name
    return values


def preset(name):
    return ExperimentConfig.from_flat(preset_values(name))
