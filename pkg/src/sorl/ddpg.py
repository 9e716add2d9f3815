"""Actor-critic training of the safe bidding policy in the simulated market."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .approx import OptimizerState, optimizer_step, soft_update
from .data import Transitions
from .market import ContractViolation, EpisodeBatch, Market, MarketConfig, constant_policy, simulate
from .models import Actor, Critic, Scaling


@dataclass(frozen=True)
class DdpgConfig:
    """Hyper-parameters of the safe-policy trainer.

    ``noise_variance`` is the variance of the Gaussian exploration noise on the
    action rescaled to [-1, 1]; in bid units the standard deviation is
    ``sqrt(noise_variance) * (A_max - A_min) / 2``.
    """

    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    tau: float = 0.01
    buffer_capacity: int = 1000
    batch_size: int = 200
    gamma: float = 0.99
    noise_variance: float = 0.01
    episodes: int = 300
    updates_per_step: int = 1
    parallel_episodes: int = 1
    train_pool: int = 200
    hidden: tuple = (64, 64)
    q_scale: float = 100.0
    seed: int = 1

    @classmethod
    def desk(cls) -> "DdpgConfig":
        """Episode budget used for the desk market's safe policy."""
        return cls(episodes=100)

    def __post_init__(self):
        problems = []
        for name in ("lr_actor", "lr_critic", "tau", "noise_variance", "q_scale"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            problems.append("gamma must lie in [0, 1]")
        if self.buffer_capacity < 1 or self.batch_size < 1:
            problems.append("buffer_capacity and batch_size must be >= 1")
        if self.episodes < 1:
            problems.append("episodes must be >= 1")
        if self.parallel_episodes < 1 or self.train_pool < 1 or self.updates_per_step < 0:
            problems.append("parallel_episodes, train_pool >= 1 and updates_per_step >= 0")
        if problems:
            raise ContractViolation("invalid DdpgConfig: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DdpgConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"unknown DdpgConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, 3))
        self.a = np.zeros(capacity)
        self.r = np.zeros(capacity)
        self.cost = np.zeros(capacity)
        self.s2 = np.zeros((capacity, 3))
        self.done = np.zeros(capacity, dtype=bool)
        self.t = np.zeros(capacity, dtype=int)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t, s, a, r, cost, s2, done) -> None:
        i = self.head
        self.t[i], self.s[i], self.a[i], self.r[i] = t, s, a, r
        self.cost[i], self.s2[i], self.done[i] = cost, s2, done
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self.head if self.size == self.capacity else 0

    def sample(self, n: int, rng: np.random.Generator) -> Transitions:
        idx = rng.integers(0, self.size, size=n)
        return Transitions(self.t[idx], self.s[idx], self.a[idx], self.r[idx], self.cost[idx],
                           self.s2[idx], self.done[idx])


def td_targets(batch: Transitions, actor_t: Actor, critic_t: Critic, gamma: float) -> np.ndarray:
    """r + gamma * Qbar(s', mubar(s')) with the bootstrap dropped on terminal transitions."""
    boot = critic_t(batch.s2, actor_t(batch.s2))
    return batch.r + gamma * np.where(batch.done, 0.0, boot)


def td_loss_and_grad(batch: Transitions, critic: Critic, targets: np.ndarray, theta=None):
    """0.5 * mean((Q(s, a) - y)^2) and its parameter gradient."""
    q, cache = critic.forward_cache(batch.s, batch.a, theta)
    err = q - targets
    loss = 0.5 * float(np.mean(err * err))
    g, _ = critic.backward(cache, err / len(err), theta)
    return loss, g


def actor_loss_and_grad(states: np.ndarray, actor: Actor, critic: Critic, theta=None):
    """-mean Q(s, mu(s)) and its gradient w.r.t. the actor parameters."""
    a, acache = actor.forward_cache(states, theta)
    q, ccache = critic.forward_cache(states, a)
    _, dq_da = critic.backward(ccache, np.full(len(q), -1.0 / len(q)))
    return -float(np.mean(q)), actor.backward(acache, dq_da, theta)


@dataclass
class DdpgNets:
    actor: Actor
    critic: Critic
    actor_target: Actor
    critic_target: Critic
    opt_actor: OptimizerState
    opt_critic: OptimizerState

    @classmethod
    def create(cls, scaling: Scaling, cfg: DdpgConfig, rng: np.random.Generator) -> "DdpgNets":
        actor = Actor.create(scaling, rng, cfg.hidden)
        critic = Critic.create(scaling, rng, cfg.hidden)
        return cls(actor, critic, actor.copy(), critic.copy(),
                   OptimizerState.for_params(actor.net.n_params, cfg.lr_actor),
                   OptimizerState.for_params(critic.net.n_params, cfg.lr_critic))


def ddpg_update(batch: Transitions, nets: DdpgNets, cfg: DdpgConfig) -> tuple[float, float]:
    """One critic step, one actor step, then Polyak averaging of both targets."""
    if len(batch) == 0:
        raise ContractViolation("ddpg_update needs a nonempty batch")
    y = td_targets(batch, nets.actor_target, nets.critic_target, cfg.gamma)
    c_loss, gc = td_loss_and_grad(batch, nets.critic, y)
    if not np.isfinite(c_loss):
        raise FloatingPointError(f"critic loss non-finite ({c_loss}); max |y|={np.max(np.abs(y))}")
    nets.critic.theta = optimizer_step(nets.opt_critic, nets.critic.theta, gc)
    a_loss, ga = actor_loss_and_grad(batch.s, nets.actor, nets.critic)
    if not np.isfinite(a_loss):
        raise FloatingPointError(f"actor loss non-finite ({a_loss})")
    nets.actor.theta = optimizer_step(nets.opt_actor, nets.actor.theta, ga)
    soft_update(nets.critic_target.net, nets.critic.net, cfg.tau)
    soft_update(nets.actor_target.net, nets.actor.net, cfg.tau)
    return c_loss, a_loss


@dataclass
class TrainingResult:
    actor: Actor
    critic: Critic
    curve: list = field(default_factory=list)   # dict rows: episode, buycnt, spend, critic_loss, actor_loss

    def write_curve(self, path) -> None:
        write_rows(path, self.curve)


def write_rows(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


TRAIN_SEED_BASE = 5_000_000


def train_safe_policy(env: MarketConfig | Market, cfg: DdpgConfig, out_dir=None,
                      market: Market | None = None, callback=None) -> TrainingResult:
    """Train a deterministic bidding policy with DDPG on the simulated market.

    Training episodes cycle through ``cfg.train_pool`` fixed episode seeds
    (disjoint from evaluation seeds). With ``out_dir`` the actor, critic and
    training curve are written there.
    """
    if isinstance(env, Market):
        market = env
    market = market or Market(env)
    mcfg = market.config
    rng = np.random.default_rng([cfg.seed, 17])
    scaling = Scaling.from_market(mcfg, cfg.q_scale)
    nets = DdpgNets.create(scaling, cfg, rng)
    buf = ReplayBuffer(cfg.buffer_capacity)
    noise_sd = np.sqrt(cfg.noise_variance) * scaling.half_range
    curve = []
    done_eps = 0
    while done_eps < cfg.episodes:
        n = min(cfg.parallel_episodes, cfg.episodes - done_eps)
        seeds = TRAIN_SEED_BASE + (np.arange(done_eps, done_eps + n) % cfg.train_pool)
        batch_env = EpisodeBatch(market, seeds)
        losses = []
        while not batch_env.finished:
            idx, states = batch_env.live_states()
            k = batch_env.k
            acts = nets.actor(states) + noise_sd * rng.standard_normal(len(idx))
            batch_env.step(np.clip(acts, mcfg.A_min, mcfg.A_max))
            ro = batch_env.out
            for e in idx:
                buf.add(k, ro.states[e, k], ro.actions[e, k], ro.rewards[e, k], ro.costs[e, k],
                        ro.next_states[e, k], ro.dones[e, k])
            if len(buf) >= min(cfg.batch_size, buf.capacity):
                for _ in range(cfg.updates_per_step):
                    losses.append(ddpg_update(buf.sample(cfg.batch_size, rng), nets, cfg))
        if not (np.all(np.isfinite(nets.actor.theta)) and np.all(np.isfinite(nets.critic.theta))):
            raise FloatingPointError(f"parameters diverged after episode {done_eps + n}")
        ro = batch_env.out
        cl, al = (np.mean(losses, axis=0) if losses else (float("nan"), float("nan")))
        for j in range(n):
            curve.append({"episode": done_eps + j, "buycnt": float(ro.buycnt[j]),
                          "spend": float(ro.spend[j]), "critic_loss": float(cl),
                          "actor_loss": float(al)})
        done_eps += n
        if callback is not None:
            callback(done_eps, nets)
    result = TrainingResult(nets.actor, nets.critic, curve)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"ddpg": cfg.to_dict(), "market": mcfg.to_dict()}
        nets.actor.save(out / "mu_s.ckpt", meta)
        nets.critic.save(out / "q_s.ckpt", meta)
        result.write_curve(out / "train_curve.csv")
    return result


def best_constant_bid(market: Market, episode_seeds, bids) -> tuple[float, float, np.ndarray]:
    """Grid-search oracle: (best bid, its mean BuyCnt, mean BuyCnt per grid bid)."""
    bids = np.asarray(bids, dtype=float)
    means = np.array([simulate(market, constant_policy(b), episode_seeds).buycnt.mean()
                      for b in bids])
    i = int(np.argmax(means))
    return float(bids[i]), float(means[i]), means
