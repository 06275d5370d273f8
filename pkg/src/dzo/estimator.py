"""Two-point zeroth-order gradient estimator and smoothing probes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import Problem, ProblemError, XiSample

DELTA_FLOOR_REL = 1e-10
_TINY = 1e-30


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class Estimate:
    g: np.ndarray
    delta_used: float


@dataclass(frozen=True)
class MCResult:
    """Monte Carlo mean with its per-component standard error."""

    mean: np.ndarray | float
    stderr: np.ndarray | float
    samples: int


def delta_floor(x) -> float | np.ndarray:
    """Smallest admissible smoothing radius at ``x`` (rows if 2-d)."""
    x = np.asarray(x, dtype=float)
    return DELTA_FLOOR_REL * (1.0 + np.linalg.norm(x, axis=-1))


def normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project rows of a Gaussian draw onto the unit sphere.

    Returns the normalized rows and a boolean mask of rows too short to
    normalize; callers must redraw those.
    """
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    bad = norms[..., 0] < _TINY
    return z / np.where(bad[..., None], 1.0, norms), bad


def sample_sphere(p: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) on the unit sphere in R^p."""
    if p < 1:
        raise EstimatorError(f"p must be >= 1, got {p}")
    shape = (1 if size is None else size, p)
    u, bad = normalize_rows(rng.standard_normal(shape))
    while bad.any():
        redo, again = normalize_rows(rng.standard_normal((int(bad.sum()), p)))
        u[bad] = redo
        bad[np.flatnonzero(bad)[~again]] = False
    return u[0] if size is None else u


def two_point_batch(prob: Problem, agents, X, deltas, U, xi_a, xi_b) -> np.ndarray:
    """Row-wise two-point estimates, two oracle calls per row.

    ``agents`` pairs each row of ``X`` with its local oracle. The same noise
    realization (``xi_a[r]``, ``xi_b[r]``) is used at both points of a row.
    """
    deltas = np.asarray(deltas, dtype=float)
    m = X.shape[0]
    agents = np.asarray(agents)
    if agents.shape != (m,):
        agents = np.broadcast_to(agents, (m,))
    xi_a = np.asarray(xi_a, dtype=float)
    if xi_a.shape != (m,):
        xi_a = np.broadcast_to(xi_a, (m,))
    # both points in one oracle pass: rows [0, m) shifted, [m, 2m) base
    both = np.concatenate([X + deltas[:, None] * U, X])
    vals = prob.noisy_values(
        np.concatenate([agents, agents]),
        both,
        np.concatenate([xi_a, xi_a]),
        np.concatenate([xi_b, xi_b]),
    )
    return (prob.p * (vals[:m] - vals[m:]) / deltas)[:, None] * U


def two_point_estimate(
    prob: Problem, i: int, x, delta: float, u, xi: XiSample
) -> Estimate:
    """g = (p / delta) * (F_i(x + delta u, xi) - F_i(x, xi)) * u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (prob.p,) or u.shape != (prob.p,):
        raise ProblemError(f"x and u must have shape ({prob.p},)")
    if xi.agent != i:
        raise ProblemError(f"noise sample belongs to agent {xi.agent}, not {i}")
    floor = float(delta_floor(x))
    if not delta >= floor:
        raise EstimatorError(f"delta = {delta} below floor {floor:.3g} at this point")
    g = two_point_batch(prob, i, x[None], np.array([delta]), u[None], xi.a, xi.b[None])[0]
    return Estimate(g, float(delta))


def _global_two_point(prob, x, delta, U):
    X = np.broadcast_to(x, U.shape)
    diff = prob.global_values(X + delta * U) - prob.global_values(X)
    return (prob.p * diff / delta)[:, None] * U


def _sample_ball(p, rng, size):
    u = sample_sphere(p, rng, size)
    r = rng.random(size) ** (1.0 / p)
    return u * r[:, None]


def _accumulate(draw, samples, chunk):
    total = None
    total_sq = None
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        vals = draw(m)
        s, sq = vals.sum(axis=0), (vals**2).sum(axis=0)
        total = s if total is None else total + s
        total_sq = sq if total_sq is None else total_sq + sq
        done += m
    mean = total / samples
    var = np.maximum(total_sq / samples - mean**2, 0.0)
    denom = max(samples - 1, 1)
    return MCResult(mean, np.sqrt(var / denom), samples)


def smoothed_value_mc(
    prob: Problem, x, delta: float, samples: int, rng: np.random.Generator, chunk: int = 100_000
) -> MCResult:
    """Monte Carlo estimate of f^s(x, delta) = E_{u in unit ball} f(x + delta u)."""
    if samples < 1:
        raise EstimatorError("samples must be >= 1")
    x = np.asarray(x, dtype=float)
    return _accumulate(
        lambda m: prob.global_values(x + delta * _sample_ball(prob.p, rng, m)), samples, chunk
    )


def smoothed_grad_mc(
    prob: Problem, x, delta: float, samples: int, rng: np.random.Generator, chunk: int = 100_000
) -> MCResult:
    """Monte Carlo estimate of grad f^s(x, delta) from noiseless two-point estimates."""
    if samples < 1:
        raise EstimatorError("samples must be >= 1")
    x = np.asarray(x, dtype=float)
    return _accumulate(
        lambda m: _global_two_point(prob, x, delta, sample_sphere(prob.p, rng, m)), samples, chunk
    )


def second_moment_mc(
    prob: Problem, x, delta: float, samples: int, rng: np.random.Generator, chunk: int = 100_000
) -> MCResult:
    """Monte Carlo estimate of E_u |two-point estimate of f|^2 (noiseless)."""
    x = np.asarray(x, dtype=float)

    def draw(m):
        g = _global_two_point(prob, x, delta, sample_sphere(prob.p, rng, m))
        return np.sum(g**2, axis=1)

    return _accumulate(draw, samples, chunk)
