"""Agent communication topologies and Laplacian spectral advisors.

A :class:`Graph` is immutable once built. Its Laplacian spectrum is computed
at construction and cached, together with the two quantities the parameter
advisors need: the largest eigenvalue ``rho`` and the smallest positive
eigenvalue ``rho2`` (algebraic connectivity).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

KINDS = ("ring", "complete", "erdos_renyi", "path", "custom")

ER_MAX_ATTEMPTS = 1000
ZERO_MODE_RTOL = 1e-10
# advisors refuse rho2 below this (relative to rho)
RHO2_FLOOR = 1e-12


class GraphError(ValueError):
    """Raised for invalid or disconnected topologies."""


class AdvisorError(ValueError):
    """Raised when a parameter advisor is evaluated outside its domain."""


def _components(weights: np.ndarray) -> list[list[int]]:
    """Connected components via union-find on the edge set."""
    n = weights.shape[0]
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    rows, cols = np.nonzero(np.triu(weights, 1))
    for a, b in zip(rows.tolist(), cols.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


@dataclass(frozen=True, eq=False)
class Graph:
    """Weighted undirected graph with cached Laplacian spectrum.

    Use :func:`build_topology` rather than calling the constructor directly;
    the constructor trusts that ``weights`` is already validated.
    """

    kind: str
    weights: np.ndarray
    er_prob: float | None = None
    laplacian: np.ndarray = field(init=False, repr=False)
    eigenvalues: np.ndarray = field(init=False, repr=False)
    rho: float = field(init=False)
    rho2: float = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        lap = np.diag(w.sum(axis=1)) - w
        lap.setflags(write=False)
        eig = np.linalg.eigvalsh(lap)
        eig.setflags(write=False)
        rho = float(eig[-1]) if eig.size else 0.0
        positive = eig[eig > ZERO_MODE_RTOL * max(rho, 1.0)]
        rho2 = float(positive[0]) if positive.size else 0.0
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "laplacian", lap)
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "rho2", rho2)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def rho_sq(self) -> float:
        """rho(L^2); equals rho(L)^2 because L is symmetric PSD."""
        return self.rho**2

    def neighbors(self, i: int) -> list[int]:
        return np.nonzero(self.weights[i])[0].tolist()

    def zero_modes(self) -> int:
        return int(np.sum(self.eigenvalues <= ZERO_MODE_RTOL * max(self.rho, 1.0)))

    @property
    def connected(self) -> bool:
        return self.zero_modes() == 1

    def to_config(self) -> dict:
        out = {"topology": self.kind, "n": self.n}
        if self.er_prob is not None:
            out["er_prob"] = self.er_prob
        if self.kind in ("custom", "erdos_renyi"):
            out["weights"] = self.weights.tolist()
        return out

    @classmethod
    def from_config(cls, section: dict, rng: np.random.Generator | None = None) -> "Graph":
        """Inverse of :meth:`to_config`.

        An ``erdos_renyi`` section carrying explicit ``weights`` is restored
        verbatim instead of being resampled.
        """
        kind = section["topology"]
        if kind == "erdos_renyi" and "weights" in section:
            w = np.asarray(section["weights"], dtype=float)
            _check_weights(w)
            _require_connected(w)
            return cls("erdos_renyi", w, er_prob=section.get("er_prob"))
        params = {k: section[k] for k in ("er_prob", "weights") if k in section}
        return build_topology(kind, int(section["n"]), params, rng)

    def spectral_report(self) -> dict:
        report = {"n": self.n, "rho": self.rho, "rho2": self.rho2}
        if self.n > 1:
            report["c1"] = advisor_c1(self)
            report["d1"] = advisor_d1(self)
        else:
            report["c1"] = None
            report["d1"] = None
        return report

    def spectral_json(self) -> str:
        return json.dumps(self.spectral_report(), indent=2, sort_keys=True)


def _check_weights(w: np.ndarray) -> None:
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise GraphError(f"weights must be a square matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise GraphError("weights contain non-finite entries")
    if np.any(w < 0):
        raise GraphError("weights must be nonnegative")
    if np.any(np.diag(w) != 0):
        raise GraphError("weights must have a zero diagonal")
    if not np.array_equal(w, w.T):
        raise GraphError("weights must be symmetric")


def _require_connected(w: np.ndarray) -> None:
    comps = _components(w)
    if len(comps) > 1:
        desc = "; ".join("{" + ", ".join(map(str, c)) + "}" for c in comps)
        raise GraphError(f"graph is disconnected: {len(comps)} components {desc}")


def _ring(n: int) -> np.ndarray:
    w = np.zeros((n, n))
    for i in range(n):
        j = (i + 1) % n
        if i != j:
            w[i, j] = w[j, i] = 1.0
    return w


def _path(n: int) -> np.ndarray:
    w = np.zeros((n, n))
    for i in range(n - 1):
        w[i, i + 1] = w[i + 1, i] = 1.0
    return w


def _erdos_renyi(n: int, prob: float, rng: np.random.Generator) -> np.ndarray:
    for _ in range(ER_MAX_ATTEMPTS):
        upper = np.triu(rng.random((n, n)) < prob, 1)
        w = (upper | upper.T).astype(float)
        if len(_components(w)) == 1:
            return w
    raise GraphError(
        f"Erdos-Renyi graph with n={n}, er_prob={prob} not connected "
        f"after {ER_MAX_ATTEMPTS} attempts"
    )


def build_topology(
    kind: str,
    n: int,
    params: dict | None = None,
    rng: np.random.Generator | None = None,
) -> Graph:
    """Build a connected communication graph.

    Parameters
    ----------
    kind : {"ring", "complete", "erdos_renyi", "path", "custom"}
    n : int
        Number of agents, at least 1.
    params : dict, optional
        ``er_prob`` for Erdos-Renyi, ``weights`` (n x n) for custom graphs.
    rng : numpy.random.Generator, optional
        Stream for Erdos-Renyi sampling. Every resampling attempt draws fresh
        edges from this same stream, so the result is a function of the seed.

    Raises
    ------
    GraphError
        On invalid parameters, a disconnected custom graph, or an
        Erdos-Renyi probability too small to connect within the budget.
    """
    params = params or {}
    if kind not in KINDS:
        raise GraphError(f"unknown topology {kind!r}; expected one of {KINDS}")
    n = int(n)
    if n < 1:
        raise GraphError(f"n must be >= 1, got {n}")

    er_prob = None
    if kind == "ring":
        w = _ring(n)
    elif kind == "path":
        w = _path(n)
    elif kind == "complete":
        w = np.ones((n, n)) - np.eye(n)
    elif kind == "erdos_renyi":
        if "er_prob" not in params:
            raise GraphError("erdos_renyi requires er_prob")
        er_prob = float(params["er_prob"])
        if not 0.0 < er_prob <= 1.0:
            raise GraphError(f"er_prob must lie in (0, 1], got {er_prob}")
        if rng is None:
            raise GraphError("erdos_renyi requires a random stream")
        w = _erdos_renyi(n, er_prob, rng)
    else:
        if "weights" not in params:
            raise GraphError("custom topology requires weights")
        w = np.asarray(params["weights"], dtype=float)
        if w.shape != (n, n):
            raise GraphError(f"weights shape {w.shape} does not match n={n}")

    _check_weights(w)
    _require_connected(w)
    g = Graph(kind, w, er_prob=er_prob)
    if not g.connected:
        # union-find said connected; the spectrum disagrees
        raise GraphError(
            f"graph has {g.zero_modes()} near-zero Laplacian modes at working "
            "precision although the edge set is connected"
        )
    return g


def _require_gap(g: Graph) -> None:
    if g.n < 2:
        raise AdvisorError("single-agent graph has no positive Laplacian eigenvalue")
    if g.rho2 <= RHO2_FLOOR * max(g.rho, 1.0):
        raise AdvisorError("graph not connected at working precision")


def advisor_c1(g: Graph) -> float:
    """Strict lower bound for kappa1 in the primal-dual schedules."""
    _require_gap(g)
    return 1.0 / g.rho2 + 1.0


def advisor_c2(g: Graph, kappa1: float) -> float:
    """Upper bound for kappa2 given kappa1 (saturates at 1/5)."""
    c1 = advisor_c1(g)
    if not kappa1 > c1:
        raise AdvisorError(f"kappa1 = {kappa1} must exceed c1 = {c1}")
    eps2 = (kappa1 - 1.0) * g.rho2 - 1.0
    eps3 = g.rho + (2.0 * kappa1**2 + 1.0) * g.rho_sq + 1.0
    return min(eps2 / eps3, 0.2)


def advisor_d1(g: Graph) -> float:
    """Open upper bound for the consensus step gamma of the primal algorithm."""
    _require_gap(g)
    return g.rho2 / (2.0 * g.rho_sq)


def advisor_d2(
    g: Graph,
    gamma: float,
    lf: float,
    sigma0: float = 0.0,
    sigma0_tilde: float = 0.0,
    p: int = 1,
) -> float:
    """Step-size cap for the primal algorithm at consensus step ``gamma``."""
    d1 = advisor_d1(g)
    if not 0.0 < gamma < d1:
        raise AdvisorError(f"gamma = {gamma} must lie in (0, d1) with d1 = {d1}")
    if not lf > 0:
        raise AdvisorError(f"lf must be positive, got {lf}")
    if p < 1:
        raise AdvisorError(f"p must be >= 1, got {p}")
    eps1 = 0.5 * gamma * g.rho2 - gamma**2 * g.rho_sq
    eps2 = (1.0 + 2.0 * gamma * g.rho2) / (2.0 * gamma * g.rho2)
    first = 4.0 * eps1 / (9.0 * lf**2)
    second = 1.0 / (64.0 * p * (1.0 + sigma0**2) * (1.0 + sigma0_tilde**2) * (2.0 * eps2 + lf))
    return min(first, second)
