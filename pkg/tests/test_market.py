import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sorl.market import (BidState, ContractViolation, ImpressionOpportunity, Impressions, Market,
                         MarketConfig, auction_step, constant_policy, resolve_wins, run_episode,
                         simulate, uniform_random_policy)
from oracles import enumerate_won_set, random_impressions

CFG = MarketConfig.desk()
SMALL = Market(MarketConfig.desk(n_min=20, n_max=40))


def imp(v1, v2, p1, p2):
    return ImpressionOpportunity(v1, v2, v2, p1, p2, p2)


def test_config_validation():
    with pytest.raises(ContractViolation):
        MarketConfig(A_min=0.0)
    with pytest.raises(ContractViolation):
        MarketConfig(n_min=5, n_max=4)
    with pytest.raises(ContractViolation):
        MarketConfig.from_dict({"T": 3, "bogus": 1})
    assert MarketConfig.from_dict(CFG.to_dict()) == CFG


def test_full_scale_scale():
    cfg = MarketConfig.full_scale()
    assert (cfg.T, cfg.n_min, cfg.n_max, cfg.v_M, cfg.p_M, cfg.A_max) == (96, 100, 500, 1.0, 1000.0, 1000.0)
    assert cfg.n_competitors == 99


def test_generate_forced_count():
    m = Market(MarketConfig.desk(n_min=3, n_max=3, seed=7))
    imps = m.generate_impressions(1, np.random.default_rng(7))
    assert len(imps) == 3
    for it in imps:
        assert 0 < it.v1 <= 1 and 0 < it.v2 <= 1 and 0 < it.v <= 1
        assert 0 < it.p1 <= CFG.p_M and 0 < it.p2 <= CFG.p_M and 0 < it.p <= CFG.p_M


def test_generate_count_range_and_bounds():
    m = Market(MarketConfig.desk())
    rng = np.random.default_rng(3)
    for t in (1, 50, 96):
        imps = m.generate_impressions(t, rng)
        assert 100 <= len(imps) <= 500
        for arr, cap in ((imps.v1, 1.0), (imps.v2, 1.0), (imps.p1, 50.0), (imps.p2, 50.0)):
            assert np.all(arr > 0) and np.all(arr <= cap)


def test_generate_deterministic():
    m = Market(MarketConfig.desk(n_min=5, n_max=9))
    a = m.generate_impressions(4, np.random.default_rng(11))
    b = m.generate_impressions(4, np.random.default_rng(11))
    for name in ("v1", "v2", "v", "p1", "p2", "p"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_generate_rejects_bad_step():
    m = Market(MarketConfig.desk(n_min=5, n_max=9))
    with pytest.raises(ContractViolation):
        m.generate_impressions(0, np.random.default_rng(0))


def test_min_bid_wins_nothing():
    imps = [imp(0.1, 0.1, 5.0, 5.0), imp(0.2, 0.3, 9.0, 9.0)]
    out = auction_step(BidState(100.0, 5, 0.0), CFG.A_min, imps, CFG)
    assert (out.reward, out.cost, out.won_count) == (0.0, 0.0, 0)


def test_boundary_ties_are_won():
    # a*v1 == p1 and a*v2 == p2 exactly (powers of two keep products exact)
    imps = [imp(0.5, 0.25, 2.0, 1.0)]
    out = auction_step(BidState(100.0, 5, 0.0), 4.0, imps, CFG)
    assert out.won_count == 1 and out.reward == 0.25 and out.cost == 1.0


def test_three_impression_hand_case():
    a = 10.0
    imps = [imp(0.1, 0.9, 2.0, 1.0),   # fails stage 1 (1.0 < 2.0)
            imp(0.9, 0.1, 1.0, 2.0),   # passes stage 1, fails stage 2
            imp(0.5, 0.6, 3.0, 4.0)]   # wins
    out = auction_step(BidState(100.0, 5, 0.0), a, imps, CFG)
    won = enumerate_won_set(a, Impressions.from_list(imps), 100.0)
    assert won.tolist() == [False, False, True]
    assert out.reward == 0.6 and out.cost == 4.0 and out.won.tolist() == won.tolist()


def test_budget_skip_in_arrival_order():
    imps = [imp(1, 1, 1, 6.0), imp(1, 1, 1, 5.0), imp(1, 1, 1, 3.0)]
    out = auction_step(BidState(9.5, 5, 0.5), 10.0, imps, CFG)
    # 6 taken, 5 skipped (only 3.5 left), 3 taken
    assert out.won.tolist() == [True, False, True]
    assert out.cost == 9.0 and out.next_state == BidState(0.5, 4, 9.5)
    assert out.terminated is False


def test_action_out_of_range_and_negative_budget():
    with pytest.raises(ContractViolation):
        auction_step(BidState(10.0, 3, 0.0), CFG.A_max + 1, [], CFG)
    with pytest.raises(ContractViolation):
        auction_step(BidState(-1.0, 3, 0.0), 5.0, [], CFG)


def test_termination_rules():
    out = auction_step(BidState(10.0, 1, 0.0), 5.0, [], CFG)
    assert out.terminated
    out = auction_step(BidState(5.0, 10, 0.0), 50.0, [imp(1, 1, 1, 4.995)], CFG)
    assert out.terminated and out.next_state.budget_left < CFG.p_min


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10), st.integers(0, 2**32 - 1), st.floats(1.0, 50.0), st.floats(0.0, 60.0))
def test_matches_enumeration(n, seed, a, budget):
    imps = random_impressions(np.random.default_rng(seed), n)
    _, won = resolve_wins(a, imps, budget)
    assert won.tolist() == enumerate_won_set(a, imps, budget).tolist()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1), st.floats(1.0, 49.0), st.floats(0.0, 1.0))
def test_monotone_win_set_without_binding_budget(n, seed, a1, frac):
    imps = random_impressions(np.random.default_rng(seed), n)
    a2 = a1 + frac * (50.0 - a1)
    _, w1 = resolve_wins(a1, imps, 1e12)
    _, w2 = resolve_wins(a2, imps, 1e12)
    assert np.all(w2[w1])


def test_stream_is_cached_and_deterministic():
    m1 = Market(MarketConfig.desk(n_min=10, n_max=20))
    m2 = Market(MarketConfig.desk(n_min=10, n_max=20))
    assert m1.stream(5) is m1.stream(5)
    assert all(np.array_equal(x.p2, y.p2) for x, y in zip(m1.stream(5), m2.stream(5)))
    assert m1.budget(5) == m2.budget(5)
    assert CFG.B_min <= m1.budget(5) <= CFG.B_max


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_budget_conservation_and_constraint(seed):
    small_market = SMALL
    pol = uniform_random_policy(small_market.config, np.random.default_rng(seed))
    ro = simulate(small_market, pol, [seed, seed + 1])
    for e in range(2):
        B = ro.budgets[e]
        live = ro.alive[e]
        s = ro.states[e][live]
        np.testing.assert_allclose(s[:, 0] + s[:, 2], B, rtol=0, atol=1e-9 * B)
        assert ro.costs[e].sum() <= B + 1e-9
        assert np.all(np.diff(s[:, 1]) == -1)
        # early end only through budget exhaustion
        if live.sum() < small_market.config.T:
            assert ro.next_states[e][live][-1, 0] < small_market.config.p_min


def test_run_episode_zero_budget():
    m = Market(MarketConfig.desk(n_min=10, n_max=20, B_min=0.0, B_max=0.0))
    recs, met = run_episode(m, constant_policy(10.0), 1)
    assert len(recs) <= 1 and met.buycnt == 0.0


def test_run_episode_max_bid_tiny_budget_ends_early():
    # p_min above any single price: the first win leaves less than p_min
    m = Market(MarketConfig.desk(n_min=10, n_max=20, B_min=30.0, B_max=30.0, p_min=29.0))
    recs, met = run_episode(m, constant_policy(m.config.A_max), 1)
    assert met.length < m.config.T
    assert recs[-1].done and met.spend <= 30.0


def test_run_episode_deterministic(small_market):
    a, ma = run_episode(small_market, constant_policy(12.0), 3)
    b, mb = run_episode(small_market, constant_policy(12.0), 3)
    assert a == b and ma == mb


def test_discounted_value_matches_definition(small_market):
    ro = simulate(small_market, constant_policy(12.0), [4])
    r = ro.rewards[0]
    g = small_market.config.gamma
    assert ro.discounted_value[0] == pytest.approx(sum(g ** k * r[k] for k in range(len(r))))


def test_malformed_policy_rejected(small_market):
    with pytest.raises(ContractViolation):
        simulate(small_market, lambda s, t: np.full(len(s) + 1, 5.0), [1])
    with pytest.raises(ContractViolation):
        simulate(small_market, lambda s, t: np.full(len(s), np.nan), [1])


def test_win_counts_have_linear_envelope(small_market):
    from sorl.explore import stage_counts, win_count_envelope
    bids = np.linspace(1.0, 50.0, 60)
    c1, c2 = zip(*(stage_counts(imps, bids) for imps in small_market.stream(1)[:20]))
    k1 = win_count_envelope(np.array(c1), bids)
    k2 = win_count_envelope(np.array(c2), bids)
    assert np.isfinite(k1) and np.isfinite(k2)
    assert np.all(np.array(c1) <= k1 * bids + 1e-9)
    assert np.all(np.array(c2) <= k2 * bids + 1e-9)
