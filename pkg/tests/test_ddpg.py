import numpy as np
import pytest

from sorl.approx import load_checkpoint
from sorl.data import Transitions
from sorl.ddpg import (DdpgConfig, DdpgNets, ReplayBuffer, best_constant_bid, ddpg_update,
                       td_loss_and_grad, td_targets, train_safe_policy)
from sorl.market import ContractViolation, Market, MarketConfig, simulate, uniform_random_policy
from sorl.models import Actor, Critic, Scaling

SC = Scaling(B_ref=100.0, T=10, A_min=1.0, A_max=50.0)


def batch(n, done, r=0.0):
    s = np.tile([50.0, 5.0, 50.0], (n, 1))
    return Transitions(t=np.full(n, 5), s=s, a=np.full(n, 10.0), r=np.full(n, r), cost=np.zeros(n),
                       s2=s - [0, 1, 0], done=np.full(n, done))


def test_config_validation():
    for bad in ({"lr_actor": 0}, {"gamma": 1.5}, {"episodes": 0}, {"buffer_capacity": 0}):
        with pytest.raises(ContractViolation):
            DdpgConfig(**bad)
    assert DdpgConfig.from_dict(DdpgConfig().to_dict()) == DdpgConfig()


def test_paper_defaults():
    c = DdpgConfig()
    assert (c.lr_actor, c.lr_critic, c.tau, c.buffer_capacity, c.batch_size, c.gamma, c.noise_variance) == \
        (1e-4, 1e-4, 0.01, 1000, 200, 0.99, 0.01)


def test_terminal_zero_reward_zero_critic():
    critic = Critic.create(SC, None)          # zero-initialized
    actor = Actor.create(SC, None)
    b = batch(4, True)
    y = td_targets(b, actor, critic, 0.99)
    assert np.all(y == 0)
    loss, g = td_loss_and_grad(b, critic, y)
    assert loss == 0.0 and np.all(g == 0)


def test_td_target_by_hand():
    critic = Critic.create(SC, None, hidden=(3,))
    critic.theta[-1] = 0.25                   # output bias only: Q = q_scale * 0.25 = 25
    actor = Actor.create(SC, None, hidden=(3,))
    b = batch(1, False, r=2.0)
    assert td_targets(b, actor, critic, 0.9)[0] == pytest.approx(2.0 + 0.9 * 25.0)
    b_done = batch(1, True, r=2.0)
    assert td_targets(b_done, actor, critic, 0.9)[0] == 2.0


def test_replay_buffer_fifo():
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.add(i, np.array([i, 0, 0.0]), float(i), 0.0, 0.0, np.zeros(3), False)
    assert len(buf) == 3
    assert sorted(buf.a.tolist()) == [2.0, 3.0, 4.0]
    assert buf.a[buf.oldest_index()] == 2.0


def test_update_rejects_empty_batch():
    nets = DdpgNets.create(SC, DdpgConfig(hidden=(4,)), np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        ddpg_update(batch(0, True), nets, DdpgConfig())


def test_update_moves_targets_softly():
    cfg = DdpgConfig(hidden=(4,), tau=0.5)
    nets = DdpgNets.create(SC, cfg, np.random.default_rng(0))
    before = nets.critic_target.theta.copy()
    ddpg_update(batch(8, False, r=1.0), nets, cfg)
    np.testing.assert_allclose(nets.critic_target.theta, 0.5 * before + 0.5 * nets.critic.theta)


def test_no_updates_keeps_initialization(small_market):
    cfg = DdpgConfig(episodes=1, hidden=(8,), updates_per_step=0, seed=4)
    res = train_safe_policy(small_market, cfg)
    init = DdpgNets.create(Scaling.from_market(small_market.config), cfg, np.random.default_rng([4, 17]))
    assert np.array_equal(res.actor.theta, init.actor.theta)


def test_actor_output_bounded():
    actor = Actor.create(SC, np.random.default_rng(0))
    actor.theta = np.random.default_rng(1).normal(0, 50, actor.net.n_params)
    s = np.random.default_rng(2).uniform(0, 100, (500, 3))
    a = actor(s)
    assert np.all(a >= SC.A_min) and np.all(a <= SC.A_max)


def test_deterministic_checkpoints(tmp_path, small_market):
    cfg = DdpgConfig(episodes=2, hidden=(8, 8), batch_size=16, buffer_capacity=100, seed=3)
    train_safe_policy(small_market, cfg, out_dir=tmp_path / "a")
    train_safe_policy(small_market, cfg, out_dir=tmp_path / "b")
    for name in ("mu_s.ckpt", "q_s.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _, extra = load_checkpoint(tmp_path / "a" / "mu_s.ckpt")
    assert extra["role"] == "actor" and extra["ddpg"]["seed"] == 3
    assert (tmp_path / "a" / "train_curve.csv").read_text().startswith("episode,")


def test_best_constant_bid_oracle(small_market):
    bids = [3.0, 10.0, 20.0]
    b, v, means = best_constant_bid(small_market, [1, 2], bids)
    assert v == means.max() and b in bids


@pytest.mark.slow
def test_training_beats_random_policy():
    m = Market(MarketConfig.desk(n_min=50, n_max=100, B_min=600.0, B_max=1400.0))
    res = train_safe_policy(m, DdpgConfig(episodes=60, parallel_episodes=1, seed=2, train_pool=60))
    seeds = list(range(900, 920))
    trained = simulate(m, res.actor, seeds).buycnt.mean()
    rnd = simulate(m, uniform_random_policy(m.config, np.random.default_rng(0)), seeds).buycnt.mean()
    assert trained > rnd
