import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgilab import dynamics as dyn
from pgilab.dynamics import FirmParams, FirmState

from oracles import decay_exact, decay_params, derivative_oracle, random_params

FAST = dict(t_end=5.0, h=0.05)


def test_derivatives_match_oracle_random_states():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        ps = random_params(rng, n)
        y = rng.uniform(0.01, 20, size=(n, 7))
        e = rng.uniform(0, 1, size=n)
        i_a, i_c = rng.uniform(0, 3, size=n), rng.uniform(0, 3, size=n)
        got = dyn.derivatives(y, e, i_a, i_c, ps)
        want = derivative_oracle(y.tolist(), e.tolist(), i_a.tolist(), i_c.tolist(), ps)
        worst = max(worst, float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want)))))
    assert worst < 1e-12


def test_linear_decay_oracle():
    p = decay_params()
    s0 = FirmState(3.0, 2.0, 4.0, 1.0, 2.0, 1.5, 0.7, e=0.3)
    traj = dyn.integrate([s0], [p], 10.0, 0.01, record_every=1000)
    err = np.max(np.abs(traj.states[-1, 0] - decay_exact(s0, p, 10.0)))
    assert err < 1e-6


def test_rk4_order_four():
    p = decay_params(delta_a=1.0, delta_d=1.5, delta_c=2.0, g_c=0.0, lambda_q=1.2)
    s0 = FirmState(3.0, 2.0, 4.0, 1.0, 2.0, 1.5, 0.7, e=0.3)
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    errs = []
    for h in hs:
        traj = dyn.integrate([s0], [p], 2.0, float(h), record_every=10**6)
        errs.append(np.max(np.abs(traj.states[-1, 0] - decay_exact(s0, p, 2.0))))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - 4) < 0.3


def test_steady_state_guess_is_stationary():
    p = FirmParams(lambda_a=0.0)
    s = dyn.steady_state_guess(p, q=2.0, e=0.4)
    d = dyn.derivatives(s.stocks()[None], np.array([0.4]), np.array([1.0]), np.array([1.0]), [p])[0]
    assert abs(d[dyn.TA]) < 1e-12 and abs(d[dyn.TD]) < 1e-12 and abs(d[dyn.TC]) < 1e-12
    with pytest.raises(ValueError):
        dyn.steady_state_guess(FirmParams(g_c=0.1, delta_c=0.05), 1.0)


@given(st.lists(st.floats(0, 30), min_size=2, max_size=5), st.floats(0.5, 5))
@settings(max_examples=50)
def test_demand_sums_to_market(techs, mu):
    n = len(techs)
    p = FirmParams(mu=mu)
    y = np.zeros((n, 7))
    y[:, dyn.TA] = y[:, dyn.TD] = y[:, dyn.TC] = techs
    e = np.linspace(0, 1, n)
    qd = dyn.user_demand(y, e, [p] * n)
    assert qd.sum() == pytest.approx(p.market_size)
    assert np.all(qd >= 0)


def test_consumer_surplus_logsumexp():
    p = FirmParams()
    y = np.array([[4.0, 1.0, 30.0, 2.0, 0, 0, 0], [5.0, 2.0, 30.0, 2.0, 0, 0, 0]])
    e = np.array([0.2, 0.6])
    T = dyn.tech_aggregate(y[:, 0], y[:, 1], y[:, 2], p)
    u = (T - p.p1 * e) / p.mu
    assert dyn.consumer_surplus(y, e, [p, p]) == pytest.approx(p.mu * p.market_size * math.log(np.exp(u).sum()))


def test_spillover_pool_excludes_own():
    pool = dyn.spillover_pool(np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.5, 1.0]))
    assert pool.tolist() == [1.0, 1.0, 2.0]
    assert dyn.spillover_pool(np.array([1.0, 2.0]), np.array([0.0, 0.0]), 0) == 2.0


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1))
def test_pgi_arrays_match_scalar(t_c, q, xp, xn, e):
    d = dyn.pgi_from_state((t_c, q, xp, xn, e))
    y = np.array([[0, 0, t_c, q, 0, xp, xn]], dtype=float)
    c_q, c_e, c_x, pgi = dyn.pgi_arrays(y, np.array([e]))
    assert (c_q[0], c_e[0], c_x[0]) == pytest.approx(d.as_tuple())
    assert -1 / 3 <= pgi[0] <= 1


def test_tech_aggregate_limits():
    p = FirmParams()
    assert dyn.tech_aggregate(2.0, 2.0, 2.0, p) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        dyn.tech_aggregate(-1.0, 1.0, 1.0, p)


def test_grid_helpers():
    g = dyn.excludability_grid(0.25)
    assert g.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ValueError):
        dyn.excludability_grid(0.3)
    assert dyn.grid_argmax(np.array([1.0, 3.0, 3.0])) == 1


def test_state_validation():
    with pytest.raises(ValueError):
        FirmState(-1, 0, 0, 0)
    with pytest.raises(ValueError):
        FirmState(1, 1, 1, 1, e=1.5)
    with pytest.raises(ValueError):
        FirmParams(delta_a=0)
    with pytest.raises(ValueError):
        dyn.Market([FirmParams(mu=1.0), FirmParams(mu=2.0)])


def test_horizon_validation():
    s = FirmState(1, 1, 1, 1)
    with pytest.raises(ValueError):
        dyn.integrate([s], [FirmParams()], 1.0, 0.3)
    with pytest.raises(ValueError):
        dyn.integrate([s], [FirmParams()], 1.0, 0.0)


def test_divergence_carries_partial_trajectory():
    p = FirmParams(g_c=6.0, delta_c=0.05)
    with pytest.raises(dyn.DivergenceError) as info:
        dyn.integrate([FirmState(1, 1, 1, 1)], [p], 20.0, 0.01)
    traj = info.value.trajectory
    assert traj is not None and 0 < info.value.t < 20
    assert np.all(np.diff(traj.times) > 0)


def test_trajectory_shapes_and_time_grid(baseline):
    params, initial = baseline.build()
    traj = dyn.integrate(initial, params, 2.0, 0.01, record_every=10, firm_ids=baseline.firm_ids)
    assert traj.states.shape == (21, 4, 7)
    assert np.allclose(np.diff(traj.times), 0.1)
    assert traj.firm_ids == baseline.firm_ids
    assert np.all(traj.states >= 0)


def test_batched_policies_match_single(baseline):
    params, initial = baseline.build()
    ev = dyn.evaluate_policies(params, initial, np.array([0.2, 0.7]), **FAST)
    one = dyn.firm_value(params, 0.7, initial, **FAST)
    assert ev.profit[1] == pytest.approx(one, rel=1e-12)


def test_optima_are_grid_argmaxes(baseline):
    params, initial = baseline.build()
    ev = dyn.evaluate_policies(params, initial, dyn.excludability_grid(0.05), **FAST)
    priv = dyn.optimize_excludability_private(params, initial, evaluation=ev)
    soc = dyn.optimize_excludability_social(params, initial, baseline.weights, evaluation=ev)
    assert priv.value == ev.profit.max()
    assert priv.e_star == ev.e_grid[np.argmax(ev.profit)]
    W = ev.welfare(baseline.weights)
    assert soc.value == W.max()
    assert np.allclose(W - ev.external(baseline.weights), baseline.weights.ps * ev.profit)


def test_higher_spillover_lowers_private_optimum(baseline):
    params, initial = baseline.build()
    r = dyn.comparative_static_lambda_a(params, initial, [0.0, 0.2], step=0.05, **FAST)
    assert r.e_star[1] <= r.e_star[0]
    with pytest.raises(ValueError):
        dyn.comparative_static_lambda_a(params, initial, [0.2, 0.0])


def test_duopoly_terminates():
    p = FirmParams()
    s = dyn.steady_state_guess(p, 5.0)
    r = dyn.duopoly_equilibrium([p, p], [s, s], step=0.1, max_iter=20, t_end=5.0, h=0.05)
    assert r.iterations <= 20
    assert all(0 <= v <= 1 for v in r.e)
    with pytest.raises(ValueError):
        dyn.duopoly_equilibrium([p], [s])


def test_tipping_symmetric_without_perturbation():
    p = FirmParams()
    s = dyn.steady_state_guess(p, 5.0)
    r = dyn.tipping_experiment([p, p], s, 0.0, t_end=5.0, h=0.05)
    assert r.share_ratio == pytest.approx(1.0)
    with pytest.raises(ValueError):
        dyn.tipping_experiment([p, p], s, -1.0)


def test_gradient_and_residual(baseline):
    params, initial = baseline.build()
    g = dyn.welfare_pgi_gradient(params, initial, **FAST)
    if g.defined:
        assert g.total == pytest.approx(g.cs_term + g.x_pos_term + g.x_neg_term)
    y = np.array([s.stocks() for s in initial])
    e = np.array([s.e for s in initial])
    ones = np.ones(len(initial))
    r = dyn.eq2_residual(y, e, ones, ones, params, {})
    assert r == pytest.approx(params[0].p1 * initial[0].q)


def test_subsidy_result_fields(baseline):
    params, initial = baseline.build()
    r = dyn.pigouvian_subsidy(params, initial, baseline.weights, step=0.05, **FAST)
    assert r.s_star >= 0
    assert 0 <= r.e_subsidized <= r.e_private


def test_apply_overrides_selected_firms(baseline):
    params, _ = baseline.build()
    out = dyn.apply_overrides(params, {"p1": 1.0}, firms=[0])
    assert out[0].p1 == 1.0 and out[1].p1 == params[1].p1
    assert replace(out[0], p1=params[0].p1) == params[0]
