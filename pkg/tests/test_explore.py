import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sorl.explore import (SafetyZone, SerConfig, SerPolicy, VanillaPolicy, estimate_constants,
                          gaussian_weights, lipschitz_from_k, reward_slopes, safety_radius,
                          ser_action, ser_weights, ser_weights_batch, vanilla_action,
                          value_gap_bound, win_count_envelope)
from sorl.market import ContractViolation, Market, MarketConfig, constant_policy

A_MIN, A_MAX = 1.0, 50.0
S = np.array([100.0, 5.0, 0.0])


def mu_const(c):
    return lambda s, t=None: np.full(len(np.atleast_2d(s)), float(c))


def q_linear(slope):
    return lambda s, a: slope * np.asarray(a, dtype=float)


def test_safety_radius_examples():
    assert safety_radius(1, 1, 1, 0, 1) == 1
    assert safety_radius(2, 4, 1, 0, 2) == 0.25
    g = 0.9
    assert safety_radius(1, 1, g, 6, 2) == pytest.approx(safety_radius(1, 1, g, 3, 2) * g ** -3)
    with pytest.raises(ContractViolation):
        safety_radius(0, 1, 1, 0, 1)


def test_bound_monotone_in_window_length():
    assert value_gap_bound(0.5, 0.99, 3, 8, 2.0) < value_gap_bound(0.5, 0.99, 3, 9, 2.0)
    assert value_gap_bound(0.0, 0.99, 3, 9, 2.0) == 0.0


def test_lipschitz_formulas():
    c = lipschitz_from_k(2, 3, 0, 0, 1.0, 10.0, 0.9)
    assert c.L_r == 5 and c.L_Q == 5
    c = lipschitz_from_k(1, 1, 0.5, 0.25, 2.0, 4.0, 0.5)
    assert c.L_Q == pytest.approx((2.0 + 0.5 * 0.75 * 4.0) * 2)


def test_weights_hand_case():
    # M=3 with fixed candidates: substitute a deterministic rng by checking the formula on returned actions
    rng = np.random.default_rng(0)
    q = lambda s, a: np.array([0.3, -0.2, 0.1])[: len(a)] if len(a) == 3 else np.zeros(len(a))
    acts, w = ser_weights(S, 10.0, q, 1.0, 0.5, 0.5, 3, rng, A_MIN, A_MAX)
    expo = -(acts - 10.0) ** 2 / 2 + np.array([0.3, -0.2, 0.1]) / 0.5
    ref = np.exp(expo) / np.exp(expo).sum()
    np.testing.assert_allclose(w, ref, rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(0.01, 5.0), st.floats(1e-3, 1e3), st.floats(0.0, 3.0),
       st.integers(1, 50), st.integers(0, 2**31))
def test_normalization_and_support(center, sigma, lam, xi, M, seed):
    q = lambda s, a: 40.0 * np.sin(np.asarray(a))
    acts, w = ser_weights(S, center, q, sigma, lam, xi, M, np.random.default_rng(seed), A_MIN, A_MAX)
    assert abs(w.sum() - 1.0) <= 1e-9
    assert np.all(w >= 0)
    lo, hi = max(center - xi, A_MIN), min(center + xi, A_MAX)
    assert np.all(acts >= lo - 1e-12) and np.all(acts <= hi + 1e-12)


def test_constant_q_gives_gaussian_factor():
    acts, w = ser_weights(S, 10.0, lambda s, a: np.full(len(a), 3.0), 1.0, 0.1, 0.5, 50,
                          np.random.default_rng(1), A_MIN, A_MAX)
    np.testing.assert_allclose(w, gaussian_weights(acts, 10.0, 1.0), atol=1e-15)


def test_large_lambda_matches_vanilla_weights():
    q = lambda s, a: 100.0 * np.asarray(a)
    acts, w = ser_weights(S, 10.0, q, 1.0, 1e6, 0.5, 1000, np.random.default_rng(2), A_MIN, A_MAX)
    assert np.max(np.abs(w - gaussian_weights(acts, 10.0, 1.0))) <= 1e-6


def test_large_sigma_gives_q_softmax():
    q = lambda s, a: np.sin(np.asarray(a))
    acts, w = ser_weights(S, 10.0, q, 1e6, 0.1, 0.5, 500, np.random.default_rng(3), A_MIN, A_MAX)
    ref = np.exp(q(None, acts) / 0.1)
    assert np.max(np.abs(w - ref / ref.sum())) <= 1e-6


def test_collapsed_zone_returns_center():
    acts, w = ser_weights(S, A_MAX, q_linear(1.0), 1.0, 0.1, 0.0, 7, np.random.default_rng(0),
                          A_MIN, A_MAX)
    assert w[0] == 1.0 and acts[0] == A_MAX


def test_ser_outside_window_is_exact():
    zone = SafetyZone(0.5, 3, 5, A_MIN, A_MAX)
    cfg = SerConfig(M=20)
    rng = np.random.default_rng(0)
    assert ser_action(S, 2, mu_const(12.3), q_linear(1.0), zone, cfg, rng) == 12.3
    assert ser_action(S, 6, mu_const(12.3), q_linear(1.0), zone, cfg, rng) == 12.3
    assert vanilla_action(S, 0, mu_const(12.3), zone, 1.0, rng) == 12.3


def test_ser_shifts_towards_higher_q():
    zone = SafetyZone(0.5, 0, 10, A_MIN, A_MAX)
    pol = SerPolicy(mu_const(10.0), q_linear(1.0), zone, SerConfig(M=100), np.random.default_rng(5))
    draws = pol(np.repeat(S[None], 10_000, axis=0), 1)
    assert np.all((draws >= 9.5) & (draws <= 10.5))
    assert draws.mean() > 10.0


def test_vanilla_symmetric_and_small_sigma():
    zone = SafetyZone(0.5, 0, 10, A_MIN, A_MAX)
    draws = VanillaPolicy(mu_const(10.0), zone, 1.0, np.random.default_rng(6))(np.repeat(S[None], 10_000, 0), 1)
    assert np.all((draws >= 9.5) & (draws <= 10.5))
    se = draws.std() / np.sqrt(len(draws))
    assert abs(draws.mean() - 10.0) <= 3 * se
    tiny = VanillaPolicy(mu_const(10.0), zone, 1e-9, np.random.default_rng(6))(np.repeat(S[None], 100, 0), 1)
    np.testing.assert_allclose(tiny, 10.0, atol=1e-6)


def test_batch_matches_single():
    q = lambda s, a: np.asarray(a) * 0.3
    rng1, rng2 = np.random.default_rng(9), np.random.default_rng(9)
    acts_b, w_b = ser_weights_batch(S[None], [10.0], q, 1.0, 0.1, 0.5, 30, rng1, A_MIN, A_MAX)
    acts_s, w_s = ser_weights(S, 10.0, q, 1.0, 0.1, 0.5, 30, rng2, A_MIN, A_MAX)
    np.testing.assert_array_equal(acts_b[0], acts_s)
    np.testing.assert_array_equal(w_b[0], w_s)


def test_envelope_properties():
    bids = np.array([1.0, 2.0, 4.0])
    counts = np.array([[0, 3, 3], [1, 1, 2]])
    k = win_count_envelope(counts, bids)
    assert k == 3.0   # slope 3 between bids 1 and 2 dominates
    assert win_count_envelope(np.zeros((2, 3)), bids) == 0.0


def test_no_wins_market_gives_zero_constants():
    cfg = MarketConfig.desk(n_min=5, n_max=8, competitor_bid_low=1e6, competitor_bid_high=1e6,
                            p_M=1e9)
    m = Market(cfg)
    q = lambda s, a: np.zeros(len(a))
    c = estimate_constants(m, constant_policy(10.0), q, [1], n_states=8)
    assert (c.k1, c.k2, c.L_r) == (0.0, 0.0, 0.0)


def test_reward_slopes_below_estimated_constant(small_market):
    q = lambda s, a: np.zeros(len(a))
    c = estimate_constants(small_market, constant_policy(10.0), q, [1, 2], n_states=16)
    bids = np.linspace(A_MIN, A_MAX, 100)
    for imps in small_market.stream(1)[::10]:
        assert reward_slopes(imps, 1e9, bids).max() <= c.L_r + 1e-9
