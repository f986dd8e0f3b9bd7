"""Linearization checks: finite-difference Jacobians, observability rank, Gramian spectrum."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SingularPointError

FD_STEP = 1e-6


def _check_regular(model, x):
    if model.singular_pairs is not None:
        hits = model.singular_pairs(x)
        if hits:
            raise SingularPointError(hits)


def _central_difference(fn, x):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = FD_STEP * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(fn(xp), dtype=float) - np.asarray(fn(xm), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)


def jacobians(model, x, dt):
    """``(F, H)`` at ``x``: ``F = I + dt * d(drift)/dx`` and ``H = d(output)/dx``."""
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    x = np.asarray(x, dtype=float).reshape(model.n)
    if not np.all(np.isfinite(x)):
        raise ConfigError("x must be finite")
    _check_regular(model, x)
    F = np.eye(model.n) + dt * _central_difference(model.drift, x)
    H = _central_difference(model.output_map, x).reshape(model.m, model.n)
    return F, H


@dataclass
class ObservabilityReport:
    horizon: int
    rank: int
    n: int
    singular_values: np.ndarray          # of the stacked matrix
    gramian_eigenvalues: np.ndarray      # ascending
    gramian_singular_values: np.ndarray
    gramian_lower: float
    gramian_upper: float
    point: np.ndarray
    trajectory_label: str = "supplied"
    tolerance: float = 0.0
    state_sup_norm: float = 0.0
    drift_jacobian_sup_norm: float = 0.0
    output_jacobian_sup_norm: float = 0.0
    matrix: np.ndarray = field(default=None, repr=False)

    @property
    def full_rank(self):
        return self.rank == self.n

    def to_dict(self):
        return {
            "horizon": self.horizon,
            "rank": self.rank,
            "n": self.n,
            "full_rank": self.full_rank,
            "rank_tolerance": self.tolerance,
            "singular_values": self.singular_values.tolist(),
            "gramian_eigenvalues": self.gramian_eigenvalues.tolist(),
            "gramian_singular_values": self.gramian_singular_values.tolist(),
            "gramian_lower": self.gramian_lower,
            "gramian_upper": self.gramian_upper,
            "point": self.point.tolist(),
            "trajectory": self.trajectory_label,
            "state_sup_norm": self.state_sup_norm,
            "drift_jacobian_sup_norm": self.drift_jacobian_sup_norm,
            "output_jacobian_sup_norm": self.output_jacobian_sup_norm,
        }

    def table(self):
        rows = [
            ("horizon N", str(self.horizon)),
            ("rank", f"{self.rank} / {self.n}"),
            ("rank tolerance", f"{self.tolerance:.3e}"),
            ("gramian min eig", f"{self.gramian_lower:.6e}"),
            ("gramian max eig", f"{self.gramian_upper:.6e}"),
            ("sup |x|", f"{self.state_sup_norm:.6e}"),
            ("sup |F|", f"{self.drift_jacobian_sup_norm:.6e}"),
            ("sup |H|", f"{self.output_jacobian_sup_norm:.6e}"),
            ("trajectory", self.trajectory_label),
        ]
        rows += [(f"sigma[{i}]", f"{s:.6e}") for i, s in enumerate(self.singular_values)]
        return "\n".join(f"{k:<18}{v:>24}" for k, v in rows)

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def observability_matrix(model, segment, N, dt, label="supplied"):
    """Stack ``H_k, H_{k+1} F_k, ..., H_{k+N} F_{k+N-1} ... F_k`` along ``segment``.

    ``segment`` is an ``(K, n)`` array (or a Trajectory) with ``K >= N + 1``;
    a single state is held fixed for all ``N + 1`` linearizations.
    """
    N = int(N)
    if N < 0:
        raise ConfigError("horizon N must be >= 0")
    seg = np.asarray(getattr(segment, "states", segment), dtype=float)
    if seg.ndim == 1:
        seg = np.repeat(seg.reshape(1, model.n), N + 1, axis=0)
    if seg.ndim != 2 or seg.shape[1] != model.n:
        raise ConfigError(f"segment must have shape (K, {model.n})")
    if len(seg) < N + 1:
        raise ConfigError(f"segment has {len(seg)} samples, need N+1 = {N + 1}")
    blocks = []
    phi = np.eye(model.n)
    f_norm = h_norm = 0.0
    for k in range(N + 1):
        F, H = jacobians(model, seg[k], dt)
        blocks.append(H @ phi)
        phi = F @ phi
        f_norm = max(f_norm, float(np.linalg.norm(F, 2)))
        h_norm = max(h_norm, float(np.linalg.norm(H, 2)))
    obs = np.vstack(blocks)
    sv = np.linalg.svd(obs, compute_uv=False)
    tol = max(obs.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    gram = obs.T @ obs
    eig = np.linalg.eigvalsh((gram + gram.T) / 2)
    return ObservabilityReport(
        horizon=N,
        rank=rank,
        n=model.n,
        singular_values=sv,
        gramian_eigenvalues=eig,
        gramian_singular_values=np.linalg.svd(gram, compute_uv=False),
        gramian_lower=float(eig[0]),
        gramian_upper=float(eig[-1]),
        point=seg[0].copy(),
        trajectory_label=label,
        tolerance=float(tol),
        state_sup_norm=float(np.max(np.abs(seg[: N + 1]))),
        drift_jacobian_sup_norm=f_norm,
        output_jacobian_sup_norm=h_norm,
        matrix=obs,
    )
