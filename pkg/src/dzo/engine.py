"""Synchronous-round simulation of the distributed zeroth-order algorithms.

Every round, each agent draws its sphere direction and noise realization
from its own counter-based stream, samples its oracle at two points, and
then all agents apply their updates at once from the iteration-``k`` state.

Agent ``i``'s stream is a Philox generator keyed by ``(seed, i)``. It is
consumed in fixed-size blocks, one row of ``2p + 1`` normals per iteration,
so the variates used at iteration ``k`` depend only on ``(seed, i, k)``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimator import delta_floor, normalize_rows, two_point_batch
from .graph import Graph
from .oracle import Problem
from .schedule import Schedule, StepParams, params_at

DIVERGENCE_LIMIT = 1e12
BLOCK = 256


class DivergenceError(RuntimeError):
    """An iterate became non-finite or exceeded the magnitude guard."""

    def __init__(self, k: int, agent: int, trace: "Trace | None" = None):
        super().__init__(f"divergence at iteration {k} (agent {agent})")
        self.k = k
        self.agent = agent
        self.trace = trace


def _agent_seed(seed: int, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(0, i))


def _master_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(1,))


class AgentStreams:
    """Per-agent Philox streams serving one (u, xi) draw per iteration.

    ``draw(k, agents)`` is a pure function of ``(seed, agent, k)``; it must be
    called with nondecreasing ``k`` for each agent.
    """

    def __init__(self, seed: int, n: int, p: int):
        self.seed = int(seed)
        self.n = n
        self.p = p
        self._gens = [np.random.Generator(np.random.Philox(_agent_seed(self.seed, i))) for i in range(n)]
        self._buf = np.empty((n, BLOCK, 2 * p + 1))
        self._block = np.full(n, -1)

    def _refill(self, i: int, block: int) -> None:
        gen = self._gens[i]
        while self._block[i] < block:
            gen.standard_normal(out=self._buf[i])
            self._block[i] += 1

    def draw(self, k: int, agents: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Raw standard normals for iteration ``k``: (z_u, z_a, z_b)."""
        block, row = divmod(k, BLOCK)
        for i in agents:
            if self._block[i] != block:
                self._refill(i, block)
        z = self._buf[agents, row]
        return z[:, : self.p], z[:, self.p], z[:, self.p + 1 :]

    def resample_direction(self, k: int, i: int) -> np.ndarray:
        # measure-zero event: a normal draw too short to normalize
        ss = np.random.SeedSequence(self.seed, spawn_key=(2, int(i), int(k)))
        gen = np.random.Generator(np.random.Philox(ss))
        while True:
            u, bad = normalize_rows(gen.standard_normal((1, self.p)))
            if not bad[0]:
                return u[0]


@dataclass
class RunState:
    """Stacked iterates of all agents at iteration ``k``.

    ``last_g`` and ``last_delta`` hold the per-agent estimates and radii used
    by the step that produced this state.
    """

    x: np.ndarray
    v: np.ndarray | None
    k: int
    streams: AgentStreams = field(repr=False)
    oracle_calls: int = 0
    last_g: np.ndarray | None = field(default=None, repr=False)
    last_delta: np.ndarray | None = field(default=None, repr=False)

    @property
    def xbar(self) -> np.ndarray:
        return self.x.mean(axis=0)


def init_state(
    prob: Problem,
    g: Graph,
    x0_policy="gaussian",
    seed: int = 0,
    scale: float = 1.0,
    dual: bool = True,
) -> RunState:
    """Initial state with zero duals.

    ``x0_policy`` is ``"zeros"``, ``"gaussian"`` (i.i.d. N(0, scale^2) entries
    from the master stream), or an explicit (n, p) array.
    """
    if g.n != prob.n:
        raise ValueError(f"graph has {g.n} agents, problem has {prob.n}")
    shape = (prob.n, prob.p)
    if isinstance(x0_policy, str):
        if x0_policy == "zeros":
            x = np.zeros(shape)
        elif x0_policy == "gaussian":
            rng = np.random.Generator(np.random.Philox(_master_seed(seed)))
            x = scale * rng.standard_normal(shape)
        else:
            raise ValueError(f"unknown x0 policy {x0_policy!r}")
    else:
        x = np.array(x0_policy, dtype=float)
        if x.shape != shape:
            raise ValueError(f"x0 has shape {x.shape}, expected {shape}")
    v = np.zeros(shape) if dual else None
    return RunState(x=x, v=v, k=0, streams=AgentStreams(seed, prob.n, prob.p))


def _estimate_chunk(prob, state, agents, delta_cap, multiplier):
    k = state.k
    z_u, z_a, z_b = state.streams.draw(k, agents)
    U, bad = normalize_rows(z_u)
    for r in np.flatnonzero(bad):
        U[r] = state.streams.resample_direction(k, agents[r])
    xi_a = prob.noise.sigma0 * z_a
    xi_b = (prob.noise.sigma1 / np.sqrt(prob.p)) * z_b
    X = state.x[agents]
    deltas = np.maximum(multiplier * delta_cap, delta_floor(X))
    return two_point_batch(prob, agents, X, deltas, U, xi_a, xi_b), deltas


def estimate_all(
    prob: Problem,
    state: RunState,
    delta_cap: float,
    multiplier: float = 1.0,
    chunk: int | None = None,
    pool: ThreadPoolExecutor | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gather phase: every agent's two-point estimate at iteration ``state.k``.

    Agents are processed in fixed chunks of ``chunk`` rows; the chunking, not
    the pool, determines the arithmetic, so results do not depend on the
    number of worker threads.
    """
    n = prob.n
    chunk = n if chunk is None else max(1, int(chunk))
    groups = [np.arange(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if pool is None or len(groups) == 1:
        parts = [_estimate_chunk(prob, state, a, delta_cap, multiplier) for a in groups]
    else:
        parts = list(pool.map(lambda a: _estimate_chunk(prob, state, a, delta_cap, multiplier), groups))
    if len(parts) == 1:
        return parts[0]
    return np.concatenate([q[0] for q in parts]), np.concatenate([q[1] for q in parts])


def _guard(x_new, k):
    bad = ~np.isfinite(x_new) | (np.abs(x_new) > DIVERGENCE_LIMIT)
    if bad.any():
        agent = int(np.argwhere(bad)[0, 0])
        raise DivergenceError(k, agent)


def step_primal_dual(
    state: RunState, sp: StepParams, prob: Problem, g: Graph, multiplier: float = 1.0, **kw
) -> RunState:
    """One round of the primal-dual update; both blocks read iteration-k values."""
    G, deltas = estimate_all(prob, state, sp.delta_cap, multiplier, **kw)
    Lx = g.laplacian @ state.x
    x_new = state.x - sp.eta * (sp.alpha * Lx + sp.beta * state.v + G)
    v_new = state.v + (sp.eta * sp.beta) * Lx
    _guard(x_new, state.k)
    return replace(
        state,
        x=x_new,
        v=v_new,
        k=state.k + 1,
        oracle_calls=state.oracle_calls + 2 * prob.n,
        last_g=G,
        last_delta=deltas,
    )


def step_primal(
    state: RunState, sp: StepParams, prob: Problem, g: Graph, multiplier: float = 1.0, **kw
) -> RunState:
    """One round of the primal update x - gamma L x - eta g."""
    G, deltas = estimate_all(prob, state, sp.delta_cap, multiplier, **kw)
    x_new = state.x - sp.gamma * (g.laplacian @ state.x) - sp.eta * G
    _guard(x_new, state.k)
    return replace(
        state,
        x=x_new,
        k=state.k + 1,
        oracle_calls=state.oracle_calls + 2 * prob.n,
        last_g=G,
        last_delta=deltas,
    )


@dataclass
class TraceRecord:
    k: int
    f_gap: float
    grad_norm_sq: float
    consensus_err: float
    eta: float
    beta: float
    delta: float
    oracle_calls: int


@dataclass
class Trace:
    records: list[TraceRecord]
    meta: dict

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def ks(self) -> np.ndarray:
        return np.array([r.k for r in self.records])


def run(
    prob: Problem,
    g: Graph,
    schedule: Schedule,
    T: int,
    seed: int = 0,
    record_every: int = 1,
    x0_policy="gaussian",
    x0_scale: float = 1.0,
    workers: int = 1,
    chunk: int | None = None,
    on_step=None,
) -> Trace:
    """Run ``T`` rounds and record metrics every ``record_every`` rounds.

    Records are taken at k = 0, every multiple of ``record_every``, and at
    k = T. The recorded eta/beta/delta are those applied at iteration k
    (delta is the largest radius over agents). ``on_step(prev, new, params)``
    is called after every round if given.

    Raises
    ------
    DivergenceError
        Carrying the partial trace in its ``trace`` attribute.
    """
    from .metrics import evaluate

    if T < 0 or record_every < 1:
        raise ValueError("need T >= 0 and record_every >= 1")
    step = step_primal_dual if schedule.primal_dual else step_primal
    state = init_state(prob, g, x0_policy, seed, x0_scale, dual=schedule.primal_dual)
    meta = {
        "regime": schedule.regime,
        "seed": int(seed),
        "n": prob.n,
        "p": prob.p,
        "T": int(T),
        "record_every": int(record_every),
        "graph": {"kind": g.kind, "n": g.n, "rho": g.rho, "rho2": g.rho2},
        "problem": prob.kind,
    }
    records: list[TraceRecord] = []
    t0 = time.perf_counter()

    def record(st, sp, delta):
        m = evaluate(prob, st)
        records.append(
            TraceRecord(st.k, m.f_gap, m.grad_norm_sq, m.consensus_err, sp.eta, sp.beta, delta, st.oracle_calls)
        )

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for k in range(T + 1):
            sp = params_at(schedule, k, prob.n, prob.p)
            want = k % record_every == 0 or k == T
            if k == T:
                if want:
                    cap = schedule.delta_multiplier * sp.delta_cap
                    record(state, sp, float(np.max(np.maximum(cap, delta_floor(state.x)))))
                break
            try:
                new = step(state, sp, prob, g, schedule.delta_multiplier, chunk=chunk, pool=pool)
            except DivergenceError as exc:
                if want:
                    cap = schedule.delta_multiplier * sp.delta_cap
                    record(state, sp, float(np.max(np.maximum(cap, delta_floor(state.x)))))
                meta["wall_time"] = time.perf_counter() - t0
                meta["diverged_at"] = exc.k
                exc.trace = Trace(records, meta)
                raise
            if want:
                record(state, sp, float(np.max(new.last_delta)))
            if on_step is not None:
                on_step(state, new, sp)
            state = new
    finally:
        if pool is not None:
            pool.shutdown()
    meta["wall_time"] = time.perf_counter() - t0
    return Trace(records, meta)
