"""Per-iteration parameter rules for the primal-dual and primal algorithms.

Each regime maps an iteration index to the step quantities of one theorem::

    pd_diminishing      beta_k = kappa0 (k + t1)^theta,  alpha_k = kappa1 beta_k,
                        eta_k = kappa2 / beta_k,  delta_k <= kd sqrt(p eta_k) / sqrt(n + p)
    pd_speedup          beta = kappa2 sqrt(p T) / sqrt(n),  eta = sqrt(n) / sqrt(p T),
                        delta_k <= kd (p n)^(1/4) / (sqrt(n + p) (k + 1)^(1/4))
    pd_pl               pd_diminishing with theta = 1
    pd_constant         beta = kappa0, alpha = kappa1 beta, eta = kappa2 / beta,
                        delta_k <= kd eps^k
    primal_diminishing  eta_k = kappa_eta / (k + t1)^theta
    primal_speedup      eta = sqrt(n) / sqrt(p T)
    primal_pl           eta_k = kappa_eta / (k + t1)
    primal_constant     eta = kappa_eta

Primal regimes also carry the constant consensus step ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .graph import AdvisorError, Graph, advisor_c1, advisor_c2, advisor_d1, advisor_d2
from .oracle import Problem

PD_REGIMES = ("pd_diminishing", "pd_speedup", "pd_pl", "pd_constant")
PRIMAL_REGIMES = ("primal_diminishing", "primal_speedup", "primal_pl", "primal_constant")
REGIMES = PD_REGIMES + PRIMAL_REGIMES

_REQUIRED = {
    "pd_diminishing": ("kappa0", "kappa1", "kappa2", "kappa_delta", "theta", "t1"),
    "pd_speedup": ("kappa1", "kappa2", "kappa_delta", "T"),
    "pd_pl": ("kappa0", "kappa1", "kappa2", "kappa_delta", "t1"),
    "pd_constant": ("kappa0", "kappa1", "kappa2", "kappa_delta", "epsilon_tilde"),
    "primal_diminishing": ("gamma", "kappa_eta", "kappa_delta", "theta", "t1"),
    "primal_speedup": ("gamma", "kappa_delta", "T"),
    "primal_pl": ("gamma", "kappa_eta", "kappa_delta", "t1"),
    "primal_constant": ("gamma", "kappa_eta", "kappa_delta", "epsilon_tilde"),
}


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class StepParams:
    alpha: float
    beta: float
    eta: float
    delta_cap: float
    gamma: float = math.nan


@dataclass(frozen=True)
class Schedule:
    regime: str
    kappa0: float | None = None
    kappa1: float | None = None
    kappa2: float | None = None
    kappa_eta: float | None = None
    kappa_delta: float | None = None
    theta: float | None = None
    t1: float | None = None
    gamma: float | None = None
    T: int | None = None
    epsilon_tilde: float | None = None
    nu: float | None = None
    delta_multiplier: float = 1.0
    allow_unvalidated: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ScheduleError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        missing = [f for f in _REQUIRED[self.regime] if getattr(self, f) is None]
        if missing:
            raise ScheduleError(f"regime {self.regime} requires {', '.join(missing)}")
        if not 0.0 < self.delta_multiplier <= 1.0:
            raise ScheduleError("delta_multiplier must lie in (0, 1]")

    @property
    def primal_dual(self) -> bool:
        return self.regime in PD_REGIMES

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ScheduleError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)

    def with_horizon(self, T: int) -> "Schedule":
        return replace(self, T=T)


def params_at(s: Schedule, k: int, n: int, p: int) -> StepParams:
    """Step quantities for iteration ``k`` with ``n`` agents in dimension ``p``."""
    if k < 0:
        raise ScheduleError(f"k must be >= 0, got {k}")
    r = s.regime
    nan = math.nan

    if r in ("pd_diminishing", "pd_pl"):
        theta = 1.0 if r == "pd_pl" else s.theta
        beta = s.kappa0 * (k + s.t1) ** theta
        eta = s.kappa2 / beta
        return StepParams(s.kappa1 * beta, beta, eta, _cap_sqrt_eta(s, eta, n, p))
    if r == "pd_speedup":
        beta = s.kappa2 * math.sqrt(p * s.T) / math.sqrt(n)
        eta = math.sqrt(n) / math.sqrt(p * s.T)
        return StepParams(s.kappa1 * beta, beta, eta, _cap_quarter(s, k, n, p))
    if r == "pd_constant":
        beta = s.kappa0
        return StepParams(s.kappa1 * beta, beta, s.kappa2 / beta, _cap_geometric(s, k))

    if r == "primal_diminishing":
        eta = s.kappa_eta / (k + s.t1) ** s.theta
        return StepParams(nan, nan, eta, _cap_sqrt_eta(s, eta, n, p), s.gamma)
    if r == "primal_pl":
        eta = s.kappa_eta / (k + s.t1)
        return StepParams(nan, nan, eta, _cap_sqrt_eta(s, eta, n, p), s.gamma)
    if r == "primal_speedup":
        eta = math.sqrt(n) / math.sqrt(p * s.T)
        return StepParams(nan, nan, eta, _cap_quarter(s, k, n, p), s.gamma)
    return StepParams(nan, nan, s.kappa_eta, _cap_geometric(s, k), s.gamma)


def _cap_sqrt_eta(s, eta, n, p):
    return s.kappa_delta * math.sqrt(p * eta) / math.sqrt(n + p)


def _cap_quarter(s, k, n, p):
    return (p * n) ** 0.25 * s.kappa_delta / (math.sqrt(n + p) * (k + 1) ** 0.25)


def _cap_geometric(s, k):
    return s.kappa_delta * s.epsilon_tilde**k


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


def validate(s: Schedule, g: Graph, prob: Problem) -> list[Diagnostic]:
    """Check a schedule against the closed-form theorem preconditions.

    Bounds with closed forms in the graph spectrum and problem constants are
    errors. Bounds that depend on proof-only constants are reported as
    warnings. Nothing is raised.
    """
    out: list[Diagnostic] = []

    def err(msg):
        out.append(Diagnostic("error", msg))

    def warn(msg):
        out.append(Diagnostic("warning", msg))

    r = s.regime
    n, p = prob.n, prob.p

    for name in ("kappa0", "kappa1", "kappa2", "kappa_eta", "kappa_delta", "t1", "gamma", "nu"):
        val = getattr(s, name)
        if val is not None and not val > 0:
            err(f"{name} = {val} must be positive")
    if s.t1 is not None and s.t1 < 1:
        err(f"t1 = {s.t1} must be >= 1")
    if s.T is not None and s.T < 1:
        err(f"T = {s.T} must be >= 1")
    if s.epsilon_tilde is not None and not 0.0 < s.epsilon_tilde < 1.0:
        err(f"epsilon_tilde = {s.epsilon_tilde} must lie in (0, 1)")
    if out:
        return out

    if r.endswith("_diminishing") and not 0.5 < s.theta < 1.0:
        err(f"theta = {s.theta} outside the theorem range (0.5, 1) for {r}")

    if n == 1:
        warn("single agent: graph-dependent bounds do not apply (centralized case)")
        graph_ok = False
    else:
        graph_ok = True

    nu = s.nu if s.nu is not None else prob.pl_nu
    if r in ("pd_pl", "primal_pl") and nu is None:
        err(f"{r} needs the P-L constant nu (schedule nu or a problem with known nu)")

    if s.primal_dual:
        if graph_ok:
            c1 = advisor_c1(g)
            if not s.kappa1 > c1:
                err(f"kappa1 = {s.kappa1} <= c1 = {c1:.6g}")
            else:
                c2 = advisor_c2(g, s.kappa1)
                if not s.kappa2 < c2:
                    err(f"kappa2 = {s.kappa2} >= c2(kappa1) = {c2:.6g}")
        if r == "pd_pl" and nu is not None:
            hi = 3.0 * nu * s.kappa2 / 16.0
            if not s.kappa0 < hi:
                err(f"kappa0 = {s.kappa0} >= 3 nu kappa2 / 16 = {hi:.6g}")
        if r == "pd_speedup" and s.T < n**3 / p:
            err(f"T = {s.T} < n^3 / p = {n**3 / p:.6g}")
        if r in ("pd_diminishing", "pd_pl"):
            warn("unchecked theorem precondition: t1 and kappa0 lower bounds (proof constants c0, c3)")
        elif r == "pd_speedup":
            warn("unchecked theorem precondition: T lower bound via proof constant c0~")
        else:
            warn("unchecked theorem precondition: beta lower bound via proof constant c0~")
        return out

    # primal regimes
    d2 = None
    if graph_ok:
        d1 = advisor_d1(g)
        if not 0.0 < s.gamma < d1:
            err(f"gamma = {s.gamma} >= d1 = {d1:.6g}")
        elif prob.lf > 0:
            d2 = advisor_d2(g, s.gamma, prob.lf, prob.noise.sigma0, prob.noise.sigma0_tilde, p)
    if r in ("primal_diminishing", "primal_pl") and d2 is not None:
        theta = 1.0 if r == "primal_pl" else s.theta
        cap = d2 * s.t1**theta
        if not s.kappa_eta <= cap:
            err(f"kappa_eta = {s.kappa_eta} > d2(gamma) t1^theta = {cap:.6g}")
    if r == "primal_diminishing" and s.t1 < p ** (1.0 / (2.0 * s.theta)):
        err(f"t1 = {s.t1} < p^(1/(2 theta)) = {p ** (1.0 / (2.0 * s.theta)):.6g}")
    if r == "primal_pl" and nu is not None and not s.kappa_eta > 8.0 / nu:
        err(f"kappa_eta = {s.kappa_eta} <= 8 / nu = {8.0 / nu:.6g}")
    if r == "primal_speedup":
        if s.T < n**3 / p:
            err(f"T = {s.T} < n^3 / p = {n**3 / p:.6g}")
        if d2 is not None and math.sqrt(n / (p * s.T)) > d2:
            err(f"eta = sqrt(n / (p T)) = {math.sqrt(n / (p * s.T)):.6g} > d2(gamma) = {d2:.6g}")
    if r == "primal_constant" and d2 is not None and not s.kappa_eta < d2:
        err(f"eta = {s.kappa_eta} >= d2(gamma) = {d2:.6g}")
    if r == "primal_pl" and graph_ok and 0.0 < s.gamma < advisor_d1(g):
        eps1 = 0.5 * s.gamma * g.rho2 - s.gamma**2 * g.rho_sq
        if not s.t1 > 1.0 / eps1:
            err(f"t1 = {s.t1} <= 1 / eps1(gamma) = {1.0 / eps1:.6g}")
    return out


def hard_errors(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.level == "error"]


__all__ = [
    "AdvisorError",
    "Diagnostic",
    "PD_REGIMES",
    "PRIMAL_REGIMES",
    "REGIMES",
    "Schedule",
    "ScheduleError",
    "StepParams",
    "hard_errors",
    "params_at",
    "validate",
]
