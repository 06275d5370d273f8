"""Convergence functionals, rate fitting, and seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracle import Problem

MIN_FIT_POINTS = 10
Z95 = 1.959963984540054


@dataclass(frozen=True)
class MetricPoint:
    k: int
    f_gap: float
    grad_norm_sq: float
    consensus_err: float

    @property
    def has_gap(self) -> bool:
        return not math.isnan(self.f_gap)


def consensus_error(x: np.ndarray) -> float:
    """(1/n) sum_i |x_i - xbar|^2."""
    d = x - x.mean(axis=0)
    return float(np.sum(d * d) / x.shape[0])


def evaluate(prob: Problem, state) -> MetricPoint:
    """Exact functionals at the state's network average.

    Uses only the measurement side-channel; ``f_gap`` is NaN when the
    problem has no known optimum.
    """
    x = state.x
    xbar = x.mean(axis=0)
    grad = prob.global_grads(xbar[None])[0]
    if prob.f_star is None:
        gap = math.nan
    else:
        gap = float(prob.global_values(xbar[None])[0] - prob.f_star)
    return MetricPoint(state.k, gap, float(grad @ grad), consensus_error(x))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    window: tuple[int, int]
    points: int


def _series(traces, metric):
    if not isinstance(traces, (list, tuple)):
        traces = [traces]
    ks = traces[0].ks
    for t in traces[1:]:
        if not np.array_equal(t.ks, ks):
            raise ValueError("traces have mismatched k grids")
    vals = np.mean([t.column(metric) for t in traces], axis=0)
    return ks, vals


def running_average(values: np.ndarray) -> np.ndarray:
    """Prefix averages: entry j is the mean of values[:j] (entry 0 is values[0])."""
    c = np.cumsum(values)
    out = np.empty_like(values, dtype=float)
    out[0] = values[0]
    out[1:] = c[:-1] / np.arange(1, len(values))
    return out


def fit_series(ks, values, window=None, scale: str = "loglog") -> RateFit:
    """Least-squares fit of log(value) against log(k) or k over ``window``."""
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        hi = ks.max()
        window = (hi / 10.0, hi)
    lo, hi = window
    sel = (ks >= lo) & (ks <= hi)
    if scale == "loglog":
        sel &= ks > 0
    kk, vv = ks[sel], values[sel]
    if kk.size < MIN_FIT_POINTS:
        raise ValueError(f"only {kk.size} points in window {window}; need {MIN_FIT_POINTS}")
    if not np.all(vv > 0) or not np.all(np.isfinite(vv)):
        raise ValueError("metric must be positive and finite over the fit window")
    xs = np.log(kk) if scale == "loglog" else kk
    ys = np.log(vv)
    if scale not in ("loglog", "semilog"):
        raise ValueError(f"unknown scale {scale!r}")
    A = np.column_stack([xs, np.ones_like(xs)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0), (int(lo), int(hi)), int(kk.size))


def fit_rate(traces, metric: str, window=None, avg_mode: str = "per_k", scale: str = "loglog") -> RateFit:
    """Fit the decay exponent of a recorded metric.

    Multiple traces are averaged pointwise first. ``avg_mode="running_average"``
    fits the prefix average (1/K) sum_{k<K} metric_k instead of metric_k; with
    a record stride above one, the prefix average is taken over recorded
    points. The default window is the last decade [T/10, T].
    """
    ks, vals = _series(traces, metric)
    if avg_mode == "running_average":
        vals = running_average(vals)
    elif avg_mode != "per_k":
        raise ValueError(f"unknown avg_mode {avg_mode!r}")
    return fit_series(ks, vals, window, scale)


@dataclass
class Aggregate:
    ks: np.ndarray
    mean: dict[str, np.ndarray]
    half_width: dict[str, np.ndarray]
    seeds: int


FIELDS = ("f_gap", "grad_norm_sq", "consensus_err")


def aggregate(traces, fields=FIELDS) -> Aggregate:
    """Pointwise mean and normal 95% CI half-width across seeds."""
    if not traces:
        raise ValueError("no traces to aggregate")
    ks = traces[0].ks
    for t in traces[1:]:
        if not np.array_equal(t.ks, ks):
            raise ValueError("traces have mismatched k grids")
    m = len(traces)
    mean, half = {}, {}
    for f in fields:
        data = np.array([t.column(f) for t in traces])
        mean[f] = data.mean(axis=0)
        if m > 1:
            half[f] = Z95 * data.std(axis=0, ddof=1) / math.sqrt(m)
        else:
            half[f] = np.zeros(len(ks))
    return Aggregate(ks, mean, half, m)
