import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dzo.graph import advisor_c2, advisor_d1, advisor_d2, build_topology
from dzo.oracle import Noise, make_problem
from dzo.schedule import (
    PD_REGIMES,
    Schedule,
    ScheduleError,
    hard_errors,
    params_at,
    validate,
)


def quad(n=4, p=2):
    return make_problem("quadratic_pl", n, p, Noise(), A=np.eye(p), b=np.zeros(p))


def errors(s, g, prob):
    return [d.message for d in hard_errors(validate(s, g, prob))]


FULL = dict(kappa0=0.5, kappa1=2.0, kappa2=0.004, kappa_eta=0.5, kappa_delta=0.3, theta=0.7,
            t1=20.0, gamma=0.01, T=500, epsilon_tilde=0.95, nu=1.0)
REGIMES = ["pd_diminishing", "pd_speedup", "pd_pl", "pd_constant",
           "primal_diminishing", "primal_speedup", "primal_pl", "primal_constant"]


class TestParams:
    def test_pd_diminishing_example(self):
        s = Schedule("pd_diminishing", kappa0=1, kappa1=2, kappa2=0.1, kappa_delta=1, theta=0.6, t1=10)
        sp = params_at(s, 0, 4, 2)
        assert sp.beta == pytest.approx(10**0.6, rel=1e-12)
        assert sp.beta == pytest.approx(3.9811, abs=1e-4)
        assert sp.alpha == pytest.approx(7.9621, abs=1e-4)
        assert sp.eta == pytest.approx(0.025119, abs=1e-6)
        assert sp.delta_cap == pytest.approx(math.sqrt(2 * sp.eta) / math.sqrt(6), rel=1e-12)

    def test_pd_speedup_example(self):
        s = Schedule("pd_speedup", kappa1=2, kappa2=0.1, kappa_delta=1, T=100)
        for k in (0, 1, 50, 99):
            sp = params_at(s, k, 16, 4)
            assert sp.eta == pytest.approx(0.2, rel=1e-14)
            assert sp.beta == pytest.approx(0.5, rel=1e-14)

    def test_pd_speedup_delta_quarter_power(self):
        s = Schedule("pd_speedup", kappa1=2, kappa2=0.1, kappa_delta=0.7, T=100)
        c0 = params_at(s, 0, 16, 4).delta_cap
        assert c0 == pytest.approx((4 * 16) ** 0.25 * 0.7 / math.sqrt(20), rel=1e-14)
        for k in (1, 15, 80):
            assert params_at(s, k, 16, 4).delta_cap == pytest.approx(c0 * (k + 1) ** -0.25, rel=1e-14)

    def test_pd_constant_example(self):
        s = Schedule("pd_constant", kappa0=1, kappa1=2, kappa2=0.1, kappa_delta=0.01, epsilon_tilde=0.9)
        assert params_at(s, 2, 4, 2).delta_cap == pytest.approx(0.0081, rel=1e-12)

    def test_pd_pl_is_theta_one(self):
        a = Schedule("pd_pl", kappa0=0.3, kappa1=2, kappa2=0.01, kappa_delta=1, t1=5)
        b = Schedule("pd_diminishing", kappa0=0.3, kappa1=2, kappa2=0.01, kappa_delta=1, t1=5, theta=1.0)
        for k in (0, 7, 1000):
            assert params_at(a, k, 3, 3) == params_at(b, k, 3, 3)

    def test_primal_arms(self):
        s = Schedule("primal_pl", gamma=0.01, kappa_eta=2.0, kappa_delta=1.0, t1=10)
        sp = params_at(s, 5, 4, 2)
        assert sp.eta == pytest.approx(2.0 / 15)
        assert sp.gamma == 0.01
        assert math.isnan(sp.alpha) and math.isnan(sp.beta)
        s = Schedule("primal_speedup", gamma=0.01, kappa_delta=1.0, T=100)
        assert params_at(s, 3, 16, 4).eta == pytest.approx(0.2)
        s = Schedule("primal_constant", gamma=0.01, kappa_eta=0.05, kappa_delta=1.0, epsilon_tilde=0.5)
        assert params_at(s, 3, 4, 2).eta == 0.05
        assert params_at(s, 3, 4, 2).delta_cap == 0.125

    def test_negative_k(self):
        with pytest.raises(ScheduleError):
            params_at(Schedule("pd_constant", **{k: FULL[k] for k in
                                                 ("kappa0", "kappa1", "kappa2", "kappa_delta", "epsilon_tilde")}),
                      -1, 2, 2)


class TestScheduleType:
    def test_missing_field_named(self):
        with pytest.raises(ScheduleError, match="requires kappa2, theta"):
            Schedule("pd_diminishing", kappa0=1, kappa1=2, kappa_delta=1, t1=1)

    def test_unknown_regime(self):
        with pytest.raises(ScheduleError, match="unknown regime"):
            Schedule("adam")

    def test_from_dict_unknown_key(self):
        with pytest.raises(ScheduleError, match="kapa1"):
            Schedule.from_dict({"regime": "pd_pl", "kapa1": 2.0})

    def test_delta_multiplier_range(self):
        with pytest.raises(ScheduleError, match="delta_multiplier"):
            Schedule("pd_speedup", kappa1=2, kappa2=0.1, kappa_delta=1, T=10, delta_multiplier=1.5)

    def test_primal_dual_flag(self):
        assert {r for r in REGIMES if Schedule(r, **FULL).primal_dual} == set(PD_REGIMES)


class TestInvariants:
    @settings(max_examples=60, deadline=None)
    @given(
        regime=st.sampled_from(REGIMES),
        k=st.integers(0, 10**4),
        n=st.integers(1, 64),
        p=st.integers(1, 64),
        theta=st.floats(0.51, 0.99),
    )
    def test_monotone(self, regime, k, n, p, theta):
        s = Schedule(regime, **{**FULL, "theta": theta})
        a, b = params_at(s, k, n, p), params_at(s, k + 1, n, p)
        assert b.delta_cap <= a.delta_cap
        assert a.delta_cap > 0
        assert b.eta <= a.eta
        if s.primal_dual:
            assert b.beta >= a.beta
            assert a.eta * a.beta == pytest.approx(s.kappa2, rel=1e-14)
            assert a.alpha == pytest.approx(s.kappa1 * a.beta, rel=1e-14)

    def test_speedup_constant_in_k(self):
        s = Schedule("pd_speedup", **FULL)
        ref = params_at(s, 0, 8, 4)
        for k in (1, 10, 499):
            sp = params_at(s, k, 8, 4)
            assert (sp.alpha, sp.beta, sp.eta) == (ref.alpha, ref.beta, ref.eta)


class TestValidate:
    def test_kappa1_below_c1(self, ring4):
        s = Schedule("pd_diminishing", **{**FULL, "kappa1": 1.4})
        msgs = errors(s, ring4, quad())
        assert any("kappa1 = 1.4 <= c1 = 1.5" in m for m in msgs)

    def test_kappa1_at_c1(self, ring4):
        s = Schedule("pd_diminishing", **{**FULL, "kappa1": 1.5})
        assert any("c1" in m for m in errors(s, ring4, quad()))

    def test_kappa2_against_c2(self, ring4):
        ok = Schedule("pd_diminishing", **{**FULL, "kappa2": 1 / 200})
        assert errors(ok, ring4, quad()) == []
        bad = Schedule("pd_diminishing", **{**FULL, "kappa2": advisor_c2(ring4, 2.0)})
        assert any("c2(kappa1)" in m for m in errors(bad, ring4, quad()))

    def test_gamma_above_d1(self, ring4):
        s = Schedule("primal_constant", **{**FULL, "gamma": 0.07})
        assert any("gamma = 0.07 >= d1 = 0.0625" in m for m in errors(s, ring4, quad()))

    def test_pd_pl_kappa0_bound(self, ring4):
        s = Schedule("pd_pl", **{**FULL, "nu": 1.0, "kappa2": 0.1, "kappa0": 0.02})
        msgs = errors(s, ring4, quad())
        assert any("kappa0 = 0.02 >= 3 nu kappa2 / 16 = 0.01875" in m for m in msgs)
        s = Schedule("pd_pl", **{**FULL, "nu": 1.0, "kappa2": 0.004, "kappa0": 0.0007})
        assert not any("kappa0" in m for m in errors(s, ring4, quad()))

    def test_theta_outside_range(self, ring4):
        s = Schedule("pd_diminishing", **{**FULL, "theta": 1e-5})
        assert any("theta = 1e-05 outside the theorem range (0.5, 1)" in m for m in errors(s, ring4, quad()))

    def test_soft_warnings(self, ring4):
        s = Schedule("pd_diminishing", **{**FULL, "kappa2": 1 / 200})
        diags = validate(s, ring4, quad())
        assert any(d.level == "warning" and "unchecked theorem precondition" in d.message for d in diags)

    def test_kappa_eta_cap(self, ring4):
        prob = quad()
        d2 = advisor_d2(ring4, 0.03, prob.lf, 0.0, 0.0, prob.p)
        t1 = 100.0
        base = {**FULL, "gamma": 0.03, "t1": t1, "theta": 0.75}
        ok = Schedule("primal_diminishing", **{**base, "kappa_eta": 0.99 * d2 * t1**0.75})
        assert errors(ok, ring4, prob) == []
        bad = Schedule("primal_diminishing", **{**base, "kappa_eta": 1.01 * d2 * t1**0.75})
        assert any("d2(gamma) t1^theta" in m for m in errors(bad, ring4, prob))

    def test_primal_pl_conditions(self, ring4):
        prob = quad()
        s = Schedule("primal_pl", **{**FULL, "gamma": 0.03, "kappa_eta": 4.0, "t1": 10})
        msgs = errors(s, ring4, prob)
        assert any("8 / nu" in m for m in msgs)
        assert any("1 / eps1(gamma)" in m for m in msgs)

    def test_speedup_horizon(self):
        g = build_topology("complete", 8)
        s = Schedule("pd_speedup", **{**FULL, "kappa2": 0.9 * advisor_c2(g, 2.0), "T": 100})
        assert any("n^3 / p" in m for m in errors(s, g, quad(8, 2)))

    def test_single_agent_skips_graph(self):
        g = build_topology("ring", 1)
        s = Schedule("pd_constant", **{**FULL, "kappa1": 0.1})
        diags = validate(s, g, quad(1, 2))
        assert hard_errors(diags) == []
        assert any("single agent" in d.message for d in diags)

    def test_pl_needs_nu(self, ring4):
        prob = make_problem("linear_probe", 4, 2)
        s = Schedule("pd_pl", **{**FULL, "nu": None})
        assert any("P-L constant" in m for m in errors(s, ring4, prob))

    def test_nonpositive(self, ring4):
        s = Schedule("pd_constant", **{**FULL, "kappa0": -1.0})
        assert any("kappa0 = -1.0 must be positive" in m for m in errors(s, ring4, quad()))

    def test_primal_constant_eta(self, ring4):
        d1 = advisor_d1(ring4)
        prob = quad()
        d2 = advisor_d2(ring4, 0.5 * d1, prob.lf, 0, 0, prob.p)
        s = Schedule("primal_constant", **{**FULL, "gamma": 0.5 * d1, "kappa_eta": 2 * d2})
        assert any("d2(gamma)" in m for m in errors(s, ring4, prob))
