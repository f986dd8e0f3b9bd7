"""Error metrics between a true trajectory and its estimate."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

CSV_COLUMNS = ("mse", "rmse", "mae", "smape_percent")
DEFAULT_THRESHOLD = 1e-2
DEFAULT_DWELL = 1.0


@dataclass
class MetricsReport:
    """Scalar metrics averaged over every state and every sample after ``burn_in``."""

    mae: float
    rmse: float
    mse: float
    smape_percent: float
    per_state_abs_error: np.ndarray = field(repr=False)
    convergence_time_s: Optional[float] = None
    burn_in: float = 0.0
    samples: int = 0

    def to_dict(self, include_series=False):
        doc = {
            "mae": self.mae,
            "rmse": self.rmse,
            "mse": self.mse,
            "smape_percent": self.smape_percent,
            "convergence_time_s": self.convergence_time_s,
            "burn_in_s": self.burn_in,
            "samples": self.samples,
        }
        if include_series:
            doc["per_state_abs_error"] = self.per_state_abs_error.tolist()
        return doc

    def row(self):
        return [self.mse, self.rmse, self.mae, self.smape_percent]


def _arrays(x, xhat):
    """Accept Trajectory objects or plain ``(N+1, n)`` arrays."""
    tx = getattr(x, "times", None)
    th = getattr(xhat, "times", None)
    xs = np.asarray(getattr(x, "states", x), dtype=float)
    hs = np.asarray(getattr(xhat, "states", xhat), dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if hs.ndim == 1:
        hs = hs[:, None]
    if xs.shape != hs.shape:
        raise ConfigError(f"trajectories are misaligned: {xs.shape} vs {hs.shape}")
    if tx is not None and th is not None:
        if len(tx) != len(th) or not np.allclose(tx, th, rtol=1e-12, atol=1e-12):
            raise ConfigError("trajectories have different time grids")
    times = tx if tx is not None else th
    return xs, hs, times


def pointwise_abs_error(x, xhat):
    """``|x_k^i - xhat_k^i|`` with shape ``(N+1, n)``."""
    xs, hs, _ = _arrays(x, xhat)
    return np.abs(xs - hs)


def smape_terms(xs, hs):
    """``|x - xhat| / ((|x| + |xhat|) / 2)`` per entry, with 0/0 taken as 0."""
    ax, ah = np.abs(xs), np.abs(hs)
    with np.errstate(over="ignore"):
        num = np.abs(xs - hs)
        den = ax + ah
    # halve before adding only where the plain sum overflows
    big = ~np.isfinite(den) | ~np.isfinite(num)
    num = np.where(big, np.abs(0.5 * xs - 0.5 * hs), num)
    den = np.where(big, 0.5 * ax + 0.5 * ah, den)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return 2.0 * out


def _rms(err, axis=None):
    """Root mean square, scaled by the largest entry so squares neither underflow nor overflow."""
    top = np.max(err, axis=axis, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    out = safe * np.sqrt(np.mean((err / safe) ** 2, axis=axis, keepdims=True))
    out = np.where(top > 0, out, 0.0)
    return out.reshape(()) if axis is None else np.squeeze(out, axis=axis)


def _mean(err):
    top = float(np.max(err))
    return top * float(np.mean(err / top)) if top > 0 else 0.0


def rmse_series(x, xhat):
    """Root-mean-square error across states at each sample."""
    return _rms(pointwise_abs_error(x, xhat), axis=1)


def convergence_time(error_series, threshold=DEFAULT_THRESHOLD, dwell=DEFAULT_DWELL, dt=None, times=None):
    """First time after which ``error_series`` stays below ``threshold`` for ``dwell`` seconds.

    Give either the sample spacing ``dt`` or explicit ``times``. Returns
    ``None`` if the series never settles for long enough.
    """
    if not threshold > 0:
        raise ConfigError("threshold must be > 0")
    if dwell < 0:
        raise ConfigError("dwell must be >= 0")
    e = np.asarray(error_series, dtype=float).reshape(-1)
    if times is None:
        if dt is None:
            raise ConfigError("need dt or times")
        times = np.arange(len(e)) * float(dt)
    times = np.asarray(times, dtype=float)
    if len(times) != len(e):
        raise ConfigError("times and error series differ in length")
    below = e < threshold
    # last index of the run of "below" samples starting at each k
    run_end = np.empty(len(e), dtype=int)
    nxt = len(e) - 1
    for k in range(len(e) - 1, -1, -1):
        if not below[k]:
            nxt = k - 1
        run_end[k] = nxt
    for k in np.nonzero(below)[0]:
        end = run_end[k]
        if times[end] - times[k] >= dwell - 1e-9 * max(1.0, dwell):
            return float(times[k] - times[0])
    return None


def aggregate_metrics(x, xhat, burn_in=0.0, threshold=DEFAULT_THRESHOLD, dwell=DEFAULT_DWELL):
    """Metrics over all states and the samples with ``t >= t0 + burn_in``."""
    xs, hs, times = _arrays(x, xhat)
    if times is None:
        raise ConfigError("aggregate_metrics needs trajectories with time stamps")
    times = np.asarray(times, dtype=float)
    if burn_in < 0:
        raise ConfigError("burn_in must be >= 0")
    keep = times - times[0] >= burn_in - 1e-9
    if burn_in >= times[-1] - times[0] or not keep.any():
        raise ConfigError(f"burn-in {burn_in} s leaves no samples")
    err = np.abs(xs - hs)
    e = err[keep]
    rmse = float(_rms(e))
    r = _rms(err, axis=1)
    return MetricsReport(
        mae=_mean(e),
        rmse=rmse,
        mse=rmse * rmse,
        smape_percent=float(100.0 * np.mean(smape_terms(xs[keep], hs[keep]))),
        per_state_abs_error=err,
        convergence_time_s=convergence_time(r, threshold, dwell, times=times),
        burn_in=float(burn_in),
        samples=int(e.size),
    )


def set_mean(reports):
    """Average the scalar metrics of several per-trajectory reports."""
    if not reports:
        raise ConfigError("no reports to average")
    conv = [r.convergence_time_s for r in reports]
    return {
        "mae": float(np.mean([r.mae for r in reports])),
        "rmse": float(np.mean([r.rmse for r in reports])),
        "mse": float(np.mean([r.mse for r in reports])),
        "smape_percent": float(np.mean([r.smape_percent for r in reports])),
        "convergence_time_s": None if any(c is None for c in conv) else float(np.mean(conv)),
        "trajectories": len(reports),
    }


def pooled_metrics(pairs, burn_in=0.0):
    """Metrics pooled over every sample of several ``(x, xhat)`` pairs."""
    xs, hs = [], []
    for x, xh in pairs:
        a, b, times = _arrays(x, xh)
        keep = np.asarray(times) - times[0] >= burn_in - 1e-9
        xs.append(a[keep])
        hs.append(b[keep])
    xs, hs = np.concatenate(xs), np.concatenate(hs)
    e = np.abs(xs - hs)
    rmse = float(_rms(e))
    return {
        "mae": _mean(e),
        "rmse": rmse,
        "mse": rmse * rmse,
        "smape_percent": float(100.0 * np.mean(smape_terms(xs, hs))),
    }


def write_report_json(path, report, extra=None):
    doc = report.to_dict() if isinstance(report, MetricsReport) else dict(report)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_report_csv(path, report):
    """One header line and one row in the order MSE, RMSE, MAE, SMAPE%."""
    row = report.row() if isinstance(report, MetricsReport) else [report[c] for c in CSV_COLUMNS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        w.writerow([repr(float(v)) for v in row])
