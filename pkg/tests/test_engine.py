import numpy as np
import pytest

from dzo.engine import (
    AgentStreams,
    DivergenceError,
    estimate_all,
    init_state,
    run,
    step_primal,
    step_primal_dual,
)
from dzo.estimator import delta_floor
from dzo.graph import advisor_c1, advisor_c2, advisor_d1, build_topology
from dzo.metrics import evaluate
from dzo.oracle import Noise, XiSample, evaluate as oracle_eval, make_problem
from dzo.schedule import Schedule, StepParams, params_at


def zero_problem(n, p):
    return make_problem("linear_probe", n, p, a=np.zeros(p))


def pd_sched(g, **kw):
    k1 = advisor_c1(g) + 1.0
    base = dict(kappa0=0.5, kappa1=k1, kappa2=0.9 * advisor_c2(g, k1), kappa_delta=1.0, theta=0.75, t1=10)
    base.update(kw)
    return Schedule("pd_diminishing", **base)


def noisy_quad(n, p=3, seed=0):
    return make_problem("quadratic_pl", n, p, Noise(0.2, 0.5, 0, 0.5), np.random.default_rng(seed),
                        mu=1.0, condition_number=3, b_scale=1.0)


class TestInit:
    def test_zeros(self, ring4):
        st = init_state(noisy_quad(4), ring4, "zeros")
        np.testing.assert_array_equal(st.x, 0)
        np.testing.assert_array_equal(st.v, 0)
        assert st.k == 0 and st.oracle_calls == 0

    def test_gaussian_reproducible(self, ring4):
        a = init_state(noisy_quad(4), ring4, "gaussian", seed=3)
        b = init_state(noisy_quad(4), ring4, "gaussian", seed=3)
        c = init_state(noisy_quad(4), ring4, "gaussian", seed=4)
        np.testing.assert_array_equal(a.x, b.x)
        assert not np.array_equal(a.x, c.x)

    def test_given_matrix(self, ring4):
        x0 = np.arange(12.0).reshape(4, 3)
        st = init_state(noisy_quad(4), ring4, x0)
        np.testing.assert_array_equal(st.x, x0)
        x0[0, 0] = 99.0
        assert st.x[0, 0] == 0.0

    def test_dimension_errors(self, ring4, ring5):
        with pytest.raises(ValueError, match="graph has 5 agents"):
            init_state(noisy_quad(4), ring5)
        with pytest.raises(ValueError, match="shape"):
            init_state(noisy_quad(4), ring4, np.zeros((4, 2)))
        with pytest.raises(ValueError, match="x0 policy"):
            init_state(noisy_quad(4), ring4, "uniform")

    def test_primal_has_no_dual(self, ring4):
        assert init_state(noisy_quad(4), ring4, dual=False).v is None


class TestStreams:
    def test_draw_depends_only_on_seed_agent_k(self):
        a = AgentStreams(5, 4, 3)
        b = AgentStreams(5, 4, 3)
        for k in range(600):
            a.draw(k, np.arange(4))
        # b jumps straight to a later block
        za = a.draw(600, np.arange(4))
        zb = b.draw(600, np.arange(4))
        for x, y in zip(za, zb):
            np.testing.assert_array_equal(x, y)

    def test_agent_subsets_agree(self):
        a = AgentStreams(1, 6, 2)
        b = AgentStreams(1, 6, 2)
        full = a.draw(3, np.arange(6))[0]
        part = np.concatenate([b.draw(3, np.arange(0, 2))[0], b.draw(3, np.arange(2, 6))[0]])
        np.testing.assert_array_equal(full, part)

    def test_agents_independent(self):
        z = AgentStreams(0, 2, 1000).draw(0, np.arange(2))[0]
        assert abs(np.corrcoef(z[0], z[1])[0, 1]) < 0.1


class TestSteps:
    def test_zero_oracle_pd(self, ring5):
        prob = zero_problem(5, 3)
        st = init_state(prob, ring5, "gaussian", seed=1)
        sp = StepParams(alpha=2.0, beta=1.0, eta=0.05, delta_cap=0.1)
        M = np.eye(5) - sp.eta * sp.alpha * ring5.laplacian
        new = step_primal_dual(st, sp, prob, ring5)
        np.testing.assert_array_equal(new.last_g, 0)
        np.testing.assert_allclose(new.x, M @ st.x, rtol=1e-14, atol=1e-15)
        for _ in range(20):
            new = step_primal_dual(new, sp, prob, ring5)
        assert np.any(new.v != 0)
        np.testing.assert_allclose(new.v.sum(axis=0), 0, atol=1e-13)

    def test_zero_oracle_primal(self, ring5):
        prob = zero_problem(5, 2)
        st = init_state(prob, ring5, "gaussian", seed=2, dual=False)
        gamma = 0.5 * advisor_d1(ring5)
        sp = StepParams(np.nan, np.nan, 0.1, 0.1, gamma)
        new = step_primal(st, sp, prob, ring5)
        np.testing.assert_allclose(new.x, (np.eye(5) - gamma * ring5.laplacian) @ st.x, rtol=1e-14)

    def test_one_step_by_hand(self):
        g = build_topology("complete", 2)
        prob = make_problem("quadratic_pl", 2, 2, A=np.eye(2), b=np.zeros(2))
        x0 = np.array([[1.0, 0.0], [-1.0, 0.0]])
        st = init_state(prob, g, x0, seed=11)
        sp = StepParams(alpha=3.0, beta=1.5, eta=0.1, delta_cap=0.05)
        new = step_primal_dual(st, sp, prob, g)

        z_u = AgentStreams(11, 2, 2).draw(0, np.arange(2))[0]
        L = np.array([[1.0, -1.0], [-1.0, 1.0]])
        x1 = np.zeros((2, 2))
        for i in range(2):
            u = z_u[i] / np.sqrt(z_u[i] @ z_u[i])
            xp = x0[i] + 0.05 * u
            fdiff = 0.5 * (xp @ xp) - 0.5 * (x0[i] @ x0[i])
            gi = 2 / 0.05 * fdiff * u
            lx = L[i, 0] * x0[0] + L[i, 1] * x0[1]
            x1[i] = x0[i] - 0.1 * (3.0 * lx + 1.5 * 0.0 + gi)
        np.testing.assert_allclose(new.x, x1, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(new.v, 0.1 * 1.5 * L @ x0, rtol=1e-15)

    def test_dual_reads_pre_update_x(self, ring4):
        prob = noisy_quad(4)
        st = init_state(prob, ring4, seed=0)
        sp = StepParams(2.0, 1.0, 0.01, 0.1)
        new = step_primal_dual(st, sp, prob, ring4)
        np.testing.assert_allclose(new.v, st.v + 0.01 * ring4.laplacian @ st.x, rtol=1e-15)

    def test_delta_clamped_to_floor(self, ring4):
        prob = noisy_quad(4)
        st = init_state(prob, ring4, seed=0, scale=100.0)
        _, deltas = estimate_all(prob, st, 1e-20)
        np.testing.assert_array_equal(deltas, delta_floor(st.x))


class TestSingleAgent:
    @pytest.mark.parametrize("regime", ["pd", "primal"])
    def test_centralized_reduction(self, regime):
        p, T, seed = 3, 200, 9
        g = build_topology("ring", 1)
        noise = Noise(0.1, 0.3)
        prob = make_problem("sin_pl", 1, p, noise, np.random.default_rng(0))
        if regime == "pd":
            s = Schedule("pd_diminishing", kappa0=1.0, kappa1=2.0, kappa2=0.05, kappa_delta=0.5, theta=0.75, t1=5)
        else:
            s = Schedule("primal_diminishing", gamma=0.01, kappa_eta=0.05, kappa_delta=0.5, theta=0.75, t1=5)
        xs = []
        run(prob, g, s, T, seed=seed, on_step=lambda a, b, sp: xs.append(b.x[0].copy()))

        # straight-line centralized two-point ZO-SGD on the same variates
        streams = AgentStreams(seed, 1, p)
        x = init_state(prob, g, "gaussian", seed=seed).x[0].copy()
        for k in range(T):
            sp = params_at(s, k, 1, p)
            z_u, z_a, z_b = streams.draw(k, np.array([0]))
            u = z_u[0] / np.linalg.norm(z_u[0])
            xi = XiSample(0, noise.sigma0 * z_a[0], noise.sigma1 / np.sqrt(p) * z_b[0])
            d = max(sp.delta_cap, 1e-10 * (1 + np.linalg.norm(x)))
            gk = p / d * (oracle_eval(prob, 0, x + d * u, xi) - oracle_eval(prob, 0, x, xi)) * u
            x = x - sp.eta * gk
            np.testing.assert_allclose(xs[k], x, rtol=1e-12, atol=1e-14)

    def test_dual_stays_zero(self):
        g = build_topology("ring", 1)
        prob = noisy_quad(1)
        s = Schedule("pd_constant", kappa0=1.0, kappa1=2.0, kappa2=0.05, kappa_delta=0.5, epsilon_tilde=0.9)
        st = init_state(prob, g)
        for k in range(50):
            st = step_primal_dual(st, params_at(s, k, 1, 3), prob, g)
        np.testing.assert_array_equal(st.v, 0)


class TestRun:
    def test_t0(self, ring4):
        tr = run(noisy_quad(4), ring4, pd_sched(ring4), 0)
        assert len(tr.records) == 1 and tr.records[0].k == 0
        assert tr.records[0].oracle_calls == 0

    def test_record_grid(self, ring4):
        tr = run(noisy_quad(4), ring4, pd_sched(ring4), 25, record_every=10)
        np.testing.assert_array_equal(tr.ks, [0, 10, 20, 25])

    def test_oracle_calls(self, ring5):
        prob = noisy_quad(5)
        tr = run(prob, ring5, pd_sched(ring5), 40, record_every=3)
        for r in tr.records:
            assert r.oracle_calls == 2 * 5 * r.k

    def test_meta(self, ring4):
        tr = run(noisy_quad(4), ring4, pd_sched(ring4), 5, seed=3)
        assert tr.meta["regime"] == "pd_diminishing"
        assert tr.meta["seed"] == 3
        assert (tr.meta["n"], tr.meta["p"]) == (4, 3)
        assert tr.meta["graph"]["rho2"] == pytest.approx(2.0)
        assert tr.meta["wall_time"] >= 0

    def test_deterministic(self, ring4):
        a = run(noisy_quad(4), ring4, pd_sched(ring4), 300, seed=5)
        b = run(noisy_quad(4), ring4, pd_sched(ring4), 300, seed=5)
        assert a.records == b.records

    @pytest.mark.parametrize("workers, chunk", [(1, 1), (3, 1), (2, 2), (4, 3), (8, None)])
    def test_worker_independence(self, workers, chunk):
        g = build_topology("ring", 7)
        prob = noisy_quad(7)
        base = run(prob, g, pd_sched(g), 200, seed=2)
        other = run(prob, g, pd_sched(g), 200, seed=2, workers=workers, chunk=chunk)
        assert base.records == other.records

    def test_recording_does_not_perturb(self, ring4):
        prob = noisy_quad(4)
        extra = []
        a = run(prob, ring4, pd_sched(ring4), 120, seed=1, record_every=1,
                on_step=lambda s, n, sp: extra.append(evaluate(prob, n)))
        b = run(prob, ring4, pd_sched(ring4), 120, seed=1, record_every=7)
        rec = {r.k: r for r in a.records}
        for r in b.records:
            assert rec[r.k] == r

    def test_divergence(self, ring4):
        prob = noisy_quad(4)
        s = Schedule("pd_constant", kappa0=0.01, kappa1=2.0, kappa2=50.0, kappa_delta=1.0,
                     epsilon_tilde=0.9, allow_unvalidated=True)
        with pytest.raises(DivergenceError, match=r"divergence at iteration \d+ \(agent \d\)") as info:
            run(prob, ring4, s, 10_000, record_every=1)
        err = info.value
        assert 0 <= err.agent < 4
        assert err.trace is not None
        assert err.trace.records[-1].k == err.k
        assert err.trace.meta["diverged_at"] == err.k

    def test_invariants_along_run(self, ring5):
        prob = noisy_quad(5)
        resid = []

        def check(prev, new, sp):
            vmax = np.max(np.abs(new.v))
            assert np.max(np.abs(new.v.sum(axis=0))) <= 1e-9 * (1 + vmax)
            pred = prev.xbar - sp.eta * new.last_g.mean(axis=0)
            resid.append(np.linalg.norm(new.xbar - pred) / (1 + np.linalg.norm(prev.xbar)))

        run(prob, ring5, pd_sched(ring5), 2000, on_step=check)
        assert max(resid) <= 1e-12

    def test_pd_constant_decreases(self):
        g = build_topology("complete", 3)
        prob = make_problem("quadratic_pl", 3, 4, A=np.eye(4), b=np.zeros(4))
        s = Schedule("pd_constant", kappa0=2.5, kappa1=3.0, kappa2=0.9 * advisor_c2(g, 3.0),
                     kappa_delta=1.0, epsilon_tilde=0.99)
        tr = run(prob, g, s, 1500, seed=0)
        gap = tr.column("f_gap")
        blocks = gap[100::100]
        above = blocks[blocks > 1e-20]
        assert len(above) >= 5
        assert np.all(np.diff(above) < 0)
