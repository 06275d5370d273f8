"""Synthetic stochastic zeroth-order oracles.

Every benchmark shares one base function ``h`` across agents and
differentiates the local costs with a multiplicative scale and an additive
linear offset::

    f_i(x) = s_i * h(x) + d_i' x,     mean(s_i) = 1,  sum(d_i) = 0

so the global cost is ``f = h`` and the heterogeneity constants are known in
closed form. Oracle noise follows the model::

    F_i(x, xi) = (1 + xi_a) * f_i(x) + xi_b' x
    xi_a ~ N(0, sigma0^2),  xi_b ~ N(0, (sigma1^2 / p) I)

whose gradient noise has variance exactly ``sigma0^2 |grad f_i|^2 + sigma1^2``.

``true_grad``, ``true_global_grad`` and ``f_value`` are measurement
side-channels. The algorithms only ever call :func:`evaluate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("quadratic_pl", "sin_pl", "heterogeneous_quadratic", "linear_probe", "logistic_synth")

SIN_PL_NU = 1.0 / 32.0


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class Noise:
    sigma0: float = 0.0
    sigma1: float = 0.0
    sigma0_tilde: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        for name in ("sigma0", "sigma1", "sigma0_tilde", "sigma2"):
            if getattr(self, name) < 0:
                raise ProblemError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class XiSample:
    """One realization of an agent's oracle noise.

    Drawn once per agent per iteration and shared by both evaluation points
    of the two-point estimator.
    """

    agent: int
    a: float
    b: np.ndarray

    @classmethod
    def null(cls, agent: int, p: int) -> "XiSample":
        return cls(agent, 0.0, np.zeros(p))


# ---------------------------------------------------------------------------
# base functions; all accept a stack of points X with shape (m, p)


class _Quadratic:
    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        eig = np.linalg.eigvalsh(self.A)
        self.lf = float(max(abs(eig[0]), abs(eig[-1])))
        self.mu = float(eig[0])

    def value(self, X):
        return 0.5 * np.einsum("ij,jk,ik->i", X, self.A, X) + X @ self.b

    def grad(self, X):
        return X @ self.A + self.b

    def minimum(self):
        if self.mu <= 0:
            return None, None
        xstar = -np.linalg.solve(self.A, self.b)
        return float(-0.5 * self.b @ np.linalg.solve(self.A, self.b)), xstar


class _SinPL:
    """Separable sum of x^2 + 3 sin^2(x): nonconvex, PL with nu = 1/32."""

    lf = 8.0

    def value(self, X):
        return np.sum(X**2 + 3.0 * np.sin(X) ** 2, axis=1)

    def grad(self, X):
        return 2.0 * X + 3.0 * np.sin(2.0 * X)

    def minimum(self):
        return 0.0, None


class _Linear:
    lf = 0.0

    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)

    def value(self, X):
        return X @ self.a

    def grad(self, X):
        return np.broadcast_to(self.a, X.shape).copy()

    def minimum(self):
        return None, None


class _Logistic:
    """L2-regularized logistic loss on a synthetic labelled sample."""

    def __init__(self, features, labels, reg):
        self.Z = np.asarray(features, dtype=float) * np.asarray(labels, dtype=float)[:, None]
        self.reg = float(reg)
        m = self.Z.shape[0]
        self.lf = self.reg + float(np.linalg.norm(self.Z, 2) ** 2) / (4.0 * m)

    def value(self, X):
        margins = X @ self.Z.T
        return np.mean(np.logaddexp(0.0, -margins), axis=1) + 0.5 * self.reg * np.sum(X**2, axis=1)

    def grad(self, X):
        margins = X @ self.Z.T
        w = -0.5 * (1.0 - np.tanh(0.5 * margins))  # -sigmoid(-margin)
        return w @ self.Z / self.Z.shape[0] + self.reg * X

    def minimum(self):
        p = self.Z.shape[1]
        m = self.Z.shape[0]
        x = np.zeros(p)
        for _ in range(100):
            g = self.grad(x[None])[0]
            s = 0.5 * (1.0 - np.tanh(0.5 * (self.Z @ x)))
            H = (self.Z.T * (s * (1.0 - s))) @ self.Z / m + self.reg * np.eye(p)
            step = np.linalg.solve(H, g)
            x = x - step
            if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(x)):
                break
        return float(self.value(x[None])[0]), x


@dataclass(frozen=True, eq=False)
class Problem:
    """A family of ``n`` local stochastic oracles in dimension ``p``.

    ``lf`` is the smoothness constant of every local cost ``f_i``;
    ``pl_nu`` and ``f_star`` are ``None`` when the construction does not make
    them exact.
    """

    kind: str
    n: int
    p: int
    noise: Noise
    lf: float
    base: object = field(repr=False)
    scales: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    pl_nu: float | None = None
    f_star: float | None = None
    x_star: np.ndarray | None = field(default=None, repr=False)

    # -- oracle -----------------------------------------------------------

    def local_values(self, agents, X) -> np.ndarray:
        """f_i(x) for each row of ``X`` paired with ``agents`` (broadcast)."""
        X = np.atleast_2d(X)
        agents = np.asarray(agents)
        if agents.shape != (X.shape[0],):
            agents = np.broadcast_to(agents, (X.shape[0],))
        return self.scales[agents] * self.base.value(X) + np.einsum("ij,ij->i", self.offsets[agents], X)

    def local_grads(self, agents, X) -> np.ndarray:
        X = np.atleast_2d(X)
        agents = np.broadcast_to(np.asarray(agents), (X.shape[0],))
        return self.scales[agents, None] * self.base.grad(X) + self.offsets[agents]

    def noisy_values(self, agents, X, xi_a, xi_b) -> np.ndarray:
        """Vectorized F_i(x, xi) over rows."""
        X = np.atleast_2d(X)
        return (1.0 + xi_a) * self.local_values(agents, X) + np.einsum("ij,ij->i", xi_b if np.shape(xi_b) == X.shape else np.broadcast_to(xi_b, X.shape), X)

    # -- measurement side-channel -----------------------------------------

    def global_values(self, X) -> np.ndarray:
        return self.base.value(np.atleast_2d(X))

    def global_grads(self, X) -> np.ndarray:
        return self.base.grad(np.atleast_2d(X))


def _spread_scales(n, spread):
    if not 0.0 <= spread < 1.0:
        raise ProblemError(f"scale_spread must lie in [0, 1), got {spread}")
    if n == 1 or spread == 0.0:
        return np.ones(n)
    return 1.0 + spread * np.linspace(-1.0, 1.0, n)


def _random_offsets(n, p, sigma2, rng):
    if n == 1 or sigma2 == 0.0:
        return np.zeros((n, p))
    d = rng.standard_normal((n, p))
    d -= d.mean(axis=0)
    return d * (sigma2 / np.max(np.linalg.norm(d, axis=1)))


def _spd_matrix(p, mu, cond, rng):
    eigs = mu * np.geomspace(1.0, cond, p) if p > 1 else np.array([mu])
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    return (q * eigs) @ q.T


def make_problem(
    kind: str,
    n: int,
    p: int,
    noise: Noise | dict | None = None,
    rng: np.random.Generator | None = None,
    **params,
) -> Problem:
    """Construct a benchmark problem.

    ``noise`` supplies the oracle noise (``sigma0``, ``sigma1``) and the
    heterogeneity target ``sigma2``; the returned problem reports the
    constants that actually hold. Kind-specific keyword parameters:

    quadratic_pl, heterogeneous_quadratic
        ``A`` (p x p) or ``mu`` and ``condition_number``; ``b`` as one shared
        vector or an (n, p) array of per-agent linear terms; ``b_scale`` for a
        random shared linear term; ``scale_spread``.
    sin_pl
        ``scale_spread``.
    linear_probe
        ``a`` (defaults to a random vector).
    logistic_synth
        ``samples``, ``reg``.
    """
    if kind not in KINDS:
        raise ProblemError(f"unknown problem kind {kind!r}; expected one of {KINDS}")
    n, p = int(n), int(p)
    if n < 1 or p < 1:
        raise ProblemError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    if noise is None:
        noise = Noise()
    elif isinstance(noise, dict):
        noise = Noise(**noise)
    if rng is None:
        rng = np.random.default_rng(0)

    allowed = {
        "quadratic_pl": {"A", "b", "mu", "condition_number", "b_scale", "scale_spread"},
        "heterogeneous_quadratic": {"A", "b", "mu", "condition_number", "b_scale", "scale_spread"},
        "sin_pl": {"scale_spread"},
        "linear_probe": {"a"},
        "logistic_synth": {"samples", "reg", "scale_spread"},
    }[kind]
    unknown = set(params) - allowed
    if unknown:
        raise ProblemError(f"parameters {sorted(unknown)} not valid for kind {kind!r}")

    scales = _spread_scales(n, float(params.get("scale_spread", 0.0)))
    offsets = None

    if kind in ("quadratic_pl", "heterogeneous_quadratic"):
        if "A" in params:
            A = np.asarray(params["A"], dtype=float)
            if A.shape != (p, p) or not np.allclose(A, A.T):
                raise ProblemError(f"A must be a symmetric {p}x{p} matrix")
        else:
            mu = float(params.get("mu", 1.0))
            cond = float(params.get("condition_number", 1.0))
            if mu <= 0 or cond < 1:
                raise ProblemError("need mu > 0 and condition_number >= 1")
            A = _spd_matrix(p, mu, cond, rng)
        b = params.get("b")
        if b is None:
            bbar = float(params.get("b_scale", 0.0)) * rng.standard_normal(p)
        else:
            b = np.asarray(b, dtype=float)
            if b.shape == (p,):
                bbar = b
            elif b.shape == (n, p):
                bbar = b.mean(axis=0)
                offsets = b - bbar
            else:
                raise ProblemError(f"b must have shape ({p},) or ({n}, {p}), got {b.shape}")
        base = _Quadratic(A, bbar)
        if base.mu <= 0:
            raise ProblemError("A must be positive definite")
        pl_nu = base.mu
    elif kind == "sin_pl":
        base = _SinPL()
        pl_nu = SIN_PL_NU
    elif kind == "linear_probe":
        a = params.get("a")
        a = rng.standard_normal(p) if a is None else np.asarray(a, dtype=float)
        if a.shape != (p,):
            raise ProblemError(f"a must have shape ({p},)")
        base = _Linear(a)
        pl_nu = None
    else:
        m = int(params.get("samples", 50))
        reg = float(params.get("reg", 0.1))
        if m < 1 or reg <= 0:
            raise ProblemError("logistic_synth needs samples >= 1 and reg > 0")
        feats = rng.standard_normal((m, p))
        truth = rng.standard_normal(p)
        labels = np.where(feats @ truth + 0.5 * rng.standard_normal(m) >= 0, 1.0, -1.0)
        base = _Logistic(feats, labels, reg)
        pl_nu = reg

    if offsets is None:
        offsets = _random_offsets(n, p, noise.sigma2, rng)
    if kind == "heterogeneous_quadratic" and n > 1 and not np.any(offsets):
        raise ProblemError("heterogeneous_quadratic needs per-agent b or sigma2 > 0")

    # heterogeneity constants that hold for this instance
    spread = float(np.max(np.abs(scales - 1.0)))
    off = float(np.max(np.linalg.norm(offsets, axis=1)))
    if spread > 0 and off > 0:
        s0t, s2 = np.sqrt(2.0) * spread, np.sqrt(2.0) * off
    else:
        s0t, s2 = spread, off
    actual = Noise(noise.sigma0, noise.sigma1, s0t, s2)

    f_star, x_star = base.minimum()
    lf = float(np.max(scales)) * base.lf
    scales.setflags(write=False)
    offsets.setflags(write=False)
    return Problem(
        kind=kind,
        n=n,
        p=p,
        noise=actual,
        lf=lf,
        base=base,
        scales=scales,
        offsets=offsets,
        pl_nu=pl_nu,
        f_star=f_star,
        x_star=x_star,
    )


def draw_xi(prob: Problem, i: int, rng: np.random.Generator) -> XiSample:
    """Draw agent ``i``'s noise realization for one iteration."""
    if not 0 <= i < prob.n:
        raise ProblemError(f"agent index {i} out of range for n={prob.n}")
    a = prob.noise.sigma0 * rng.standard_normal()
    b = (prob.noise.sigma1 / np.sqrt(prob.p)) * rng.standard_normal(prob.p)
    return XiSample(i, float(a), b)


def _check_point(prob: Problem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != prob.p:
        raise ProblemError(f"point has dimension {x.shape[-1]}, expected {prob.p}")
    return x


def evaluate(prob: Problem, i: int, x, xi: XiSample) -> float:
    """Sample F_i(x, xi)."""
    x = _check_point(prob, x)
    if xi.agent != i:
        raise ProblemError(f"noise sample belongs to agent {xi.agent}, not {i}")
    return float(prob.noisy_values(i, x[None], xi.a, xi.b[None])[0])


def true_grad(prob: Problem, i: int, x) -> np.ndarray:
    x = _check_point(prob, x)
    return prob.local_grads(i, x[None])[0]


def true_global_grad(prob: Problem, x) -> np.ndarray:
    x = _check_point(prob, x)
    return prob.global_grads(x[None])[0]


def f_value(prob: Problem, x) -> float:
    x = _check_point(prob, x)
    return float(prob.global_values(x[None])[0])
