import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgilab import abm
from pgilab.abm import AbmParams, FirmAgent, UserAgent

P = AbmParams()


def small_run(sid, seed=3, steps=4, users=300):
    return abm.run_scenario(sid, steps=steps, n_users=users, seed=seed)


def test_firm_table():
    firms = abm.load_firm_table()
    assert len(firms) == 6
    assert sum(f.market_share for f in firms) == pytest.approx(1.0)
    assert {f.strategy_tag for f in firms} <= set(abm.STRATEGIES)


def test_firm_table_errors(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("firm_id,capital,tech_level,market_share,strategy_tag,excludability,safety_investment,rd_rate\n"
                 "A,1,50,0.5,hybrid,0.5,0.1,0.1\n")
    with pytest.raises(abm.AbmError, match="sum"):
        abm.load_firm_table(p)
    p.write_text(p.read_text().replace("0.5,hybrid", "x,hybrid"))
    with pytest.raises(abm.AbmError, match=":2:"):
        abm.load_firm_table(p)


def test_agent_validation():
    with pytest.raises(abm.AbmError):
        FirmAgent("X", 1, 200, 0.1, "hybrid", 0.5, 0.1, 0.1)
    with pytest.raises(abm.AbmError):
        FirmAgent("X", 1, 50, 0.1, "hybrid", 1.5, 0.1, 0.1)
    with pytest.raises(abm.AbmError):
        abm.PolicyScenario("S9")
    with pytest.raises(abm.AbmError):
        abm.PolicyScenario("S3", share_cap=0.0)


def test_hhi():
    assert abm.hhi([1.0]) == 1.0
    assert abm.hhi([0.25] * 4) == 0.25


@given(st.lists(st.floats(0.01, 1), min_size=2, max_size=8))
def test_hhi_bounds(w):
    s = np.array(w) / sum(w)
    assert 1 / len(s) - 1e-12 <= abm.hhi(s) <= 1 + 1e-12


def test_logit_probs_and_draw():
    U = np.array([[0.0, np.log(3.0)]])
    assert abm.logit_probs(U, 1.0)[0].tolist() == pytest.approx([0.25, 0.75])
    assert abm.logit_draw(U, np.array([0.2]), 1.0)[0] == 0
    assert abm.logit_draw(U, np.array([0.3]), 1.0)[0] == 1
    # a -inf column is never chosen
    V = np.array([[0.0, -np.inf, 0.0]])
    assert abm.logit_draw(V, np.array([0.9999]), 1.0)[0] == 2


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0.1, 5))
@settings(max_examples=50)
def test_logit_draw_frequencies(us, mu):
    U = np.array(us)[None, :]
    p = abm.logit_probs(U, mu)[0]
    u = (np.arange(4000) + 0.5) / 4000
    k = abm.logit_draw(np.repeat(U, u.size, 0), u, mu)
    freq = np.bincount(k, minlength=len(us)) / u.size
    assert np.allclose(freq, p, atol=1 / 4000 + 1e-9)


def test_user_utility_matches_matrix():
    state = abm.init_market(60, seed=5)
    U = abm.utility_matrix(state, P)
    firms = state.firms(P)
    for k in (0, 17, 59):
        user = state.user(k, P)
        row = [abm.user_utility(user, f, f.market_share, P) for f in firms]
        assert np.allclose(row, U[k])


def test_choose_provider_returns_active_firm():
    user = UserAgent(0, "BalancedUsers", 0.5, 0.5, 0.5, 0.5, None, 0.0)
    firms = [FirmAgent("A", 1, 50, 0.5, "hybrid", 0.5, 0.1, 0.1),
             FirmAgent("B", 1, 50, 0.5, "hybrid", 0.5, 0.1, 0.1, dormant=True)]
    assert abm.choose_provider(user, firms, np.random.default_rng(0)) == "A"
    with pytest.raises(abm.AbmError):
        abm.choose_provider(user, firms[1:], np.random.default_rng(0))


def test_init_market_shape_and_determinism():
    a = abm.init_market(600, seed=9)
    b = abm.init_market(600, seed=9)
    assert a.state_bytes() == b.state_bytes()
    assert a.share.sum() == pytest.approx(1.0)
    assert np.bincount(a.segment).tolist() == [100] * 6
    assert abm.init_market(600, seed=10).state_bytes() != a.state_bytes()
    with pytest.raises(abm.AbmError):
        abm.init_market(3)


def test_policy_amounts():
    assert abm.subsidy_amount(0.25, 0.2, 0.2, P) == pytest.approx(0.2 * 0.75 * 0.2 * P.market_value)
    assert abm.tax_amount(0.5, 0.0, 2.0, P) == pytest.approx(2.0 * 0.5**P.zeta * 0.5 * P.market_value)
    assert abm.tax_amount(0.5, 1.0, 2.0, P) == 0.0
    inc = abm.apply_policy(abm.make_scenario("S0"))
    assert inc == abm.Incentives()


def test_make_scenario_portfolio():
    s4 = abm.make_scenario("S4")
    assert s4.portfolio and s4.subsidy_rate > 0 and s4.pollution_tax_rate > 0 and s4.share_cap is not None
    assert abm.make_scenario("S1").pollution_tax_rate == 0.0


def test_share_cap_enforced():
    state = abm.init_market(500, seed=1)
    state.provider[:] = 0
    u = np.random.default_rng(0).random(500)
    moved = abm.enforce_share_cap(state, 0.35, P, u)
    assert moved == 500 - 175
    assert state.share.max() <= 0.35 + 1e-12


def test_firm_step_leaves_state_untouched():
    state = abm.init_market(300, seed=2)
    before = state.state_bytes()
    f = abm.firm_step(state, 0, abm.Incentives(subsidy_rate=0.2), P)
    assert state.state_bytes() == before
    assert abs(f.excludability - state.excl[0]) <= P.e_step + 1e-12


def test_subsidy_never_raises_excludability_choice():
    state = abm.init_market(300, seed=2)
    for i in range(state.n_firms):
        e0 = abm.choose_excludability(state, i, abm.Incentives(), P)
        e1 = abm.choose_excludability(state, i, abm.Incentives(subsidy_rate=0.5), P)
        assert e1 <= e0


def test_run_is_deterministic():
    a, b = small_run("S4", seed=7), small_run("S4", seed=7)
    assert a.final_state.state_bytes() == b.final_state.state_bytes()
    assert a.rows() == b.rows()
    assert small_run("S4", seed=8).rows() != a.rows()


def test_run_metrics_ranges():
    run = small_run("S2")
    assert len(run.metrics) == 5
    for m in run.metrics:
        assert 0 < m.hhi <= 1
        assert 0 <= m.safety_index <= 1
        assert -1 / 3 <= m.avg_pgi <= 1
    s = run.series("safety_index")
    assert np.all(np.diff(s) >= 0)  # the tax pushes safety up


def test_share_cap_holds_every_step():
    run = small_run("S3", steps=6, users=400)
    assert max(m.max_share for m in run.metrics[1:]) <= 0.35 + 1 / 400


def test_terminal_values_and_segments():
    runs = {sid: [small_run(sid, seed=s) for s in (1, 2)] for sid in ("S0", "S1")}
    tv = abm.terminal_values(runs["S0"][0])
    assert set(tv) >= {"welfare", "avg_pgi", "hhi", "innovation", "data_quality", "safety"}
    rep = abm.segment_report(runs)
    assert all(v == 0 for v in rep.segment_delta["S0"].values())
    assert set(rep.segment_delta["S1"]) == set(abm.SEGMENTS)
    with pytest.raises(abm.AbmError):
        abm.segment_report({"S1": runs["S1"]})


def test_steps_validation():
    with pytest.raises(abm.AbmError):
        abm.run_scenario("S0", steps=0, n_users=100)
