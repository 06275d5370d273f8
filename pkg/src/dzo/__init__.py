"""Distributed zeroth-order stochastic optimization over networks.

Agents hold private cost functions they can only sample through a noisy
function-value oracle, and cooperate over an undirected graph to minimize
the average cost. Two algorithms are provided: a primal-dual method with
per-agent dual variables and a primal method with a consensus step.
"""

from .engine import DivergenceError, RunState, Trace, TraceRecord, init_state, run, step_primal, step_primal_dual
from .estimator import sample_sphere, two_point_estimate
from .graph import Graph, advisor_c1, advisor_c2, advisor_d1, advisor_d2, build_topology
from .metrics import aggregate, evaluate, fit_rate
from .oracle import Noise, Problem, make_problem
from .schedule import Schedule, params_at, validate

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "Graph",
    "Noise",
    "Problem",
    "RunState",
    "Schedule",
    "Trace",
    "TraceRecord",
    "advisor_c1",
    "advisor_c2",
    "advisor_d1",
    "advisor_d2",
    "aggregate",
    "build_topology",
    "evaluate",
    "fit_rate",
    "init_state",
    "make_problem",
    "params_at",
    "run",
    "sample_sphere",
    "step_primal",
    "step_primal_dual",
    "two_point_estimate",
    "validate",
]
