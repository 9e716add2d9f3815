"""Two-stage cascade auction market and the budget-constrained bidding episode.

One learning advertiser bids a single scalar ``a`` per time step. Every
impression that arrives during the step is won iff it passes both stages,
``a * v1 >= p1`` and ``a * v2 >= p2``, and the remaining budget still covers
its price. The other advertisers are a fixed population of static bidders, so
the market is stationary.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterator, Sequence

import numpy as np

# Policies are called on a batch of states, shape (E, 3), and the 0-based step index.
Policy = Callable[[np.ndarray, int], np.ndarray]


class ContractViolation(ValueError):
    """Raised when an operation is called outside its stated preconditions."""


@dataclass(frozen=True)
class MarketConfig:
    T: int = 96
    n_min: int = 100
    n_max: int = 500
    B_min: float = 31_000.0
    B_max: float = 36_000.0
    v_M: float = 1.0
    p_M: float = 1000.0
    A_min: float = 1.0
    A_max: float = 1000.0
    n_competitors: int = 99
    gamma: float = 0.99
    seed: int = 0
    # competitor market model
    competitor_bid_low: float = 100.0
    competitor_bid_high: float = 300.0
    stage2_slots: int = 10
    rough_noise: float = 0.3
    p_min: float = 0.01
    value_log_mean: float = -3.0
    value_log_spread: float = 0.9
    competitor_value_log_mean: float = -1.5
    competitor_value_spread: float = 0.4
    popularity_spread: float = 0.5

    def __post_init__(self):
        problems = []
        if self.T < 1:
            problems.append("T must be >= 1")
        if not 1 <= self.n_min <= self.n_max:
            problems.append("need 1 <= n_min <= n_max")
        if not 0 <= self.B_min <= self.B_max:
            problems.append("need 0 <= B_min <= B_max")
        if not 0 < self.A_min < self.A_max:
            problems.append("need 0 < A_min < A_max")
        if self.v_M <= 0 or self.p_M <= 0:
            problems.append("v_M and p_M must be positive")
        if not 0 < self.p_min <= self.p_M:
            problems.append("need 0 < p_min <= p_M")
        if not 0.0 <= self.gamma <= 1.0:
            problems.append("gamma must lie in [0, 1]")
        if self.n_competitors < 1:
            problems.append("n_competitors must be >= 1")
        if not 1 <= self.stage2_slots <= self.n_competitors:
            problems.append("need 1 <= stage2_slots <= n_competitors")
        if not 0 < self.competitor_bid_low <= self.competitor_bid_high:
            problems.append("need 0 < competitor_bid_low <= competitor_bid_high")
        if self.rough_noise < 0:
            problems.append("rough_noise must be >= 0")
        if problems:
            raise ContractViolation("invalid MarketConfig: " + "; ".join(problems))

    @classmethod
    def full_scale(cls, **overrides) -> "MarketConfig":
        """Scale of the published simulated system (A_min raised to keep bids positive)."""
        base = dict(T=96, n_min=100, n_max=500, B_min=100_000.0, B_max=200_000.0,
                    v_M=1.0, p_M=1000.0, A_min=1.0, A_max=1000.0, n_competitors=99)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides) -> "MarketConfig":
        """Reference configuration used by the acceptance runs."""
        base = dict(T=96, n_min=100, n_max=500, B_min=2500.0, B_max=6000.0,
                    v_M=1.0, p_M=50.0, A_min=1.0, A_max=50.0, n_competitors=99,
                    competitor_bid_low=2.5, competitor_bid_high=7.5,
                    stage2_slots=10, rough_noise=0.35, p_min=0.01, gamma=0.99)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown MarketConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ImpressionOpportunity:
    v1: float
    v2: float
    v: float
    p1: float
    p2: float
    p: float


@dataclass(frozen=True)
class Impressions:
    """Struct-of-arrays view of one step's impression list (arrival order)."""

    v1: np.ndarray
    v2: np.ndarray
    v: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p: np.ndarray

    def __len__(self) -> int:
        return len(self.v)

    def __getitem__(self, j) -> ImpressionOpportunity:
        return ImpressionOpportunity(float(self.v1[j]), float(self.v2[j]), float(self.v[j]),
                                     float(self.p1[j]), float(self.p2[j]), float(self.p[j]))

    def __iter__(self) -> Iterator[ImpressionOpportunity]:
        return (self[j] for j in range(len(self)))

    @classmethod
    def from_list(cls, items: Sequence[ImpressionOpportunity]) -> "Impressions":
        cols = {name: np.array([getattr(it, name) for it in items], dtype=float)
                for name in ("v1", "v2", "v", "p1", "p2", "p")}
        return cls(**cols)

    def subset(self, mask: np.ndarray) -> "Impressions":
        return Impressions(self.v1[mask], self.v2[mask], self.v[mask],
                           self.p1[mask], self.p2[mask], self.p[mask])


@dataclass(frozen=True)
class BidState:
    budget_left: float
    time_left: int
    budget_consumed: float

    def as_array(self) -> np.ndarray:
        return np.array([self.budget_left, self.time_left, self.budget_consumed], dtype=float)

    @classmethod
    def initial(cls, B: float, T: int) -> "BidState":
        return cls(float(B), int(T), 0.0)


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    cost: float
    won_count: int
    next_state: BidState
    terminated: bool
    won: np.ndarray = field(repr=False, default=None)


def _as_impressions(imps) -> Impressions:
    if isinstance(imps, Impressions):
        return imps
    return Impressions.from_list(list(imps))


def resolve_wins(a: float, imps: Impressions, budget: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (stage1_pass, won) masks for bid ``a`` against one step's impressions.

    Impressions are processed in list order; a two-stage winner whose price
    exceeds the budget remaining at its position is skipped.
    """
    stage1 = a * imps.v1 >= imps.p1
    eligible = stage1 & (a * imps.v2 >= imps.p2)
    prices = np.where(eligible, imps.p, 0.0)
    if prices.sum() <= budget:
        return stage1, eligible
    won = np.zeros_like(eligible)
    remaining = budget
    for j in np.flatnonzero(eligible):
        if imps.p[j] <= remaining:
            won[j] = True
            remaining -= imps.p[j]
    return stage1, won


def auction_step(state: BidState, a: float, imps, config: MarketConfig) -> StepOutcome:
    if state.budget_left < 0:
        raise ContractViolation(f"negative budget_left {state.budget_left}")
    if not config.A_min <= a <= config.A_max:
        raise ContractViolation(f"action {a} outside [{config.A_min}, {config.A_max}]")
    imps = _as_impressions(imps)
    _, won = resolve_wins(a, imps, state.budget_left)
    cost = float(imps.p[won].sum())
    reward = float(imps.v[won].sum())
    nxt = BidState(state.budget_left - cost, state.time_left - 1, state.budget_consumed + cost)
    terminated = nxt.budget_left < config.p_min or nxt.time_left <= 0
    return StepOutcome(reward, cost, int(won.sum()), nxt, terminated, won)


class Market:
    """The simulated advertising system: fixed competitors plus a seeded impression stream.

    Competitor bid scalars are drawn once from ``config.seed``. Each episode is
    identified by an integer episode seed that fixes its budget and every
    impression of every step, so different policies can be compared on
    identical streams.
    """

    def __init__(self, config: MarketConfig, cache_size: int = 320):
        self.config = config
        rng = np.random.default_rng([config.seed, 0xC0FFEE])
        self.competitor_bids = rng.uniform(config.competitor_bid_low, config.competitor_bid_high,
                                           size=config.n_competitors)
        self._stream = functools.lru_cache(maxsize=cache_size)(self._build_stream)

    def episode_rng(self, episode_seed: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, 1, int(episode_seed)])

    def budget(self, episode_seed: int) -> float:
        rng = np.random.default_rng([self.config.seed, 2, int(episode_seed)])
        return float(rng.uniform(self.config.B_min, self.config.B_max))

    def generate_impressions(self, t: int, rng: np.random.Generator) -> Impressions:
        cfg = self.config
        if not 1 <= t <= cfg.T:
            raise ContractViolation(f"step t={t} outside [1, {cfg.T}]")
        n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
        lo = 1e-3 * cfg.v_M
        # impression popularity shifts every advertiser's value for the same impression
        pop = cfg.popularity_spread * rng.standard_normal(n, dtype=np.float32)
        v2 = np.clip(cfg.v_M * np.exp(cfg.value_log_mean + pop
                                      + cfg.value_log_spread * rng.standard_normal(n)), lo, cfg.v_M)
        v1 = np.clip(v2 * np.exp(cfg.rough_noise * rng.standard_normal(n)), lo, cfg.v_M)
        shape = (cfg.n_competitors, n)
        w2 = np.exp(cfg.competitor_value_log_mean + pop
                    + cfg.competitor_value_spread * rng.standard_normal(shape, dtype=np.float32))
        np.clip(w2, lo, cfg.v_M, out=w2)
        w1 = w2 * np.exp(cfg.rough_noise * rng.standard_normal(shape, dtype=np.float32))
        np.clip(w1, lo, cfg.v_M, out=w1)
        b = self.competitor_bids[:, None].astype(np.float32)
        e1 = b * w1
        e2 = b * w2
        k = cfg.stage2_slots
        # the k competitors with the highest rough eCPM advance to stage 2
        top = np.argpartition(-e1, k - 1, axis=0)[:k]
        p1 = np.min(np.take_along_axis(e1, top, axis=0), axis=0).astype(float)
        p2 = np.max(np.take_along_axis(e2, top, axis=0), axis=0).astype(float)
        p1 = np.clip(p1, cfg.p_min, cfg.p_M)
        p2 = np.clip(p2, cfg.p_min, cfg.p_M)
        # final value and price are the stage-2 ones; arrays are shared, never mutated
        return Impressions(v1=v1, v2=v2, v=v2, p1=p1, p2=p2, p=p2)

    def _build_stream(self, episode_seed: int) -> tuple[Impressions, ...]:
        rng = self.episode_rng(episode_seed)
        return tuple(self.generate_impressions(t, rng) for t in range(1, self.config.T + 1))

    def stream(self, episode_seed: int) -> tuple[Impressions, ...]:
        """All T impression lists of an episode (cached)."""
        return self._stream(int(episode_seed))

    def initial_state(self, episode_seed: int) -> BidState:
        return BidState.initial(self.budget(episode_seed), self.config.T)

    def step(self, state: BidState, a: float, imps) -> StepOutcome:
        return auction_step(state, a, imps, self.config)


@dataclass
class Rollouts:
    """Batched trajectories; step arrays have shape (E, T), padded after termination."""

    episode_seeds: np.ndarray
    budgets: np.ndarray
    states: np.ndarray        # (E, T, 3)
    actions: np.ndarray       # (E, T)
    rewards: np.ndarray       # (E, T)
    costs: np.ndarray         # (E, T)
    won_counts: np.ndarray    # (E, T)
    next_states: np.ndarray   # (E, T, 3)
    dones: np.ndarray         # (E, T) bool
    alive: np.ndarray         # (E, T) bool, True where the step was taken
    gamma: float
    logs: list = None         # per-episode list of StepLog when recorded

    @property
    def lengths(self) -> np.ndarray:
        return self.alive.sum(axis=1)

    @property
    def buycnt(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    @property
    def spend(self) -> np.ndarray:
        return self.costs.sum(axis=1)

    @property
    def discounted_value(self) -> np.ndarray:
        disc = self.gamma ** np.arange(self.rewards.shape[1])
        return (self.rewards * disc).sum(axis=1)

    def transitions(self):
        from .data import Transitions
        m = self.alive
        t_idx = np.broadcast_to(np.arange(m.shape[1]), m.shape)
        return Transitions(t=t_idx[m], s=self.states[m], a=self.actions[m], r=self.rewards[m],
                           cost=self.costs[m], s2=self.next_states[m], done=self.dones[m])


@dataclass(frozen=True)
class StepLog:
    t: int
    action: float
    impressions: Impressions
    stage1: np.ndarray
    won: np.ndarray


class EpisodeBatch:
    """Step-wise driver for a batch of episodes on their fixed impression streams."""

    def __init__(self, market: Market, episode_seeds: Sequence[int], record_impressions: bool = False):
        cfg = market.config
        self.market = market
        self.seeds = np.asarray(episode_seeds, dtype=np.int64)
        E, T = len(self.seeds), cfg.T
        budgets = np.array([market.budget(s) for s in self.seeds])
        self.state = np.column_stack([budgets, np.full(E, float(T)), np.zeros(E)])
        self.live = np.ones(E, dtype=bool)
        self.k = 0
        self.streams = [market.stream(s) for s in self.seeds]
        self.out = Rollouts(self.seeds, budgets, np.zeros((E, T, 3)), np.zeros((E, T)),
                            np.zeros((E, T)), np.zeros((E, T)), np.zeros((E, T), dtype=int),
                            np.zeros((E, T, 3)), np.zeros((E, T), dtype=bool),
                            np.zeros((E, T), dtype=bool), cfg.gamma,
                            [[] for _ in range(E)] if record_impressions else None)

    @property
    def finished(self) -> bool:
        return self.k >= self.market.config.T or not self.live.any()

    def live_states(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.live)
        return idx, self.state[idx].copy()

    def step(self, actions: np.ndarray) -> np.ndarray:
        """Advance every live episode by one step; ``actions`` aligns with ``live_states``.

        Returns the episode indices that were stepped.
        """
        cfg = self.market.config
        idx = np.flatnonzero(self.live)
        acts = np.asarray(actions, dtype=float).reshape(-1)
        if acts.shape[0] != idx.size or not np.all(np.isfinite(acts)):
            raise ContractViolation("policy returned a malformed action batch")
        acts = np.clip(acts, cfg.A_min, cfg.A_max)
        k, out = self.k, self.out
        for a, e in zip(acts, idx):
            imps = self.streams[e][k]
            cur = self.state[e]
            stage1, won = resolve_wins(a, imps, cur[0])
            cost = float(imps.p[won].sum())
            nxt = np.array([cur[0] - cost, cur[1] - 1.0, cur[2] + cost])
            done = nxt[0] < cfg.p_min or nxt[1] <= 0
            out.states[e, k] = cur
            out.actions[e, k] = a
            out.rewards[e, k] = float(imps.v[won].sum())
            out.costs[e, k] = cost
            out.won_counts[e, k] = int(won.sum())
            out.next_states[e, k] = nxt
            out.dones[e, k] = done
            out.alive[e, k] = True
            if out.logs is not None:
                out.logs[e].append(StepLog(k, float(a), imps, stage1, won))
            self.state[e] = nxt
            if done:
                self.live[e] = False
        self.k += 1
        return idx


def simulate(market: Market, policy: Policy, episode_seeds: Sequence[int],
             record_impressions: bool = False) -> Rollouts:
    """Run one episode per seed, querying ``policy`` on the batch of live states each step."""
    batch = EpisodeBatch(market, episode_seeds, record_impressions)
    while not batch.finished:
        _, states = batch.live_states()
        batch.step(policy(states, batch.k))
    return batch.out


@dataclass
class EpisodeMetrics:
    buycnt: float
    spend: float
    won_count: int
    length: int
    discounted_value: float
    budget: float


def run_episode(market: Market, policy: Policy, episode_seed: int):
    """Single-episode convenience wrapper returning (trajectory, metrics)."""
    from .data import TransitionRecord
    ro = simulate(market, policy, [episode_seed])
    tr = ro.transitions()
    records = [TransitionRecord(int(tr.t[i]), tuple(tr.s[i]), float(tr.a[i]), float(tr.r[i]),
                                float(tr.cost[i]), tuple(tr.s2[i]), bool(tr.done[i]))
               for i in range(len(tr))]
    metrics = EpisodeMetrics(float(ro.buycnt[0]), float(ro.spend[0]), int(ro.won_counts[0].sum()),
                             int(ro.lengths[0]), float(ro.discounted_value[0]), float(ro.budgets[0]))
    return records, metrics


def constant_policy(bid: float) -> Policy:
    def policy(states, t):
        return np.full(len(states), float(bid))
    return policy


def uniform_random_policy(config: MarketConfig, rng: np.random.Generator) -> Policy:
    def policy(states, t):
        return rng.uniform(config.A_min, config.A_max, size=len(states))
    return policy


def with_config(config: MarketConfig, **changes) -> MarketConfig:
    return replace(config, **changes)
