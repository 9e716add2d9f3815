"""Iterative safe online RL: warm boot from the safe policy, then alternate exploration and offline training."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import TaggedDataset, write_jsonl
from .ddpg import write_rows
from .evaluation import market_rr_star
from .explore import SerConfig, SerPolicy, VanillaPolicy
from .market import ContractViolation, Market, simulate
from .models import Actor, Critic
from .vcql import VcqlConfig, train_offline

COLLECT_SEED_BASE = 7_000_000
EVAL_SEED_BASE = 9_000_000


@dataclass(frozen=True)
class SorlConfig:
    iterations: int = 5
    warm_boot_episodes: int = 100
    episodes_per_round: int = 100
    eval_episodes: int = 100
    convergence_tol: float = 0.0
    run_vanilla: bool = True
    warm_start: bool = True

    def __post_init__(self):
        if self.iterations < 0 or self.episodes_per_round < 1 or self.eval_episodes < 1:
            raise ContractViolation("SorlConfig needs iterations >= 0 and positive episode counts")
        if self.warm_boot_episodes < 0 or self.convergence_tol < 0:
            raise ContractViolation("warm_boot_episodes and convergence_tol must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SorlConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"unknown SorlConfig keys: {sorted(unknown)}")
        return cls(**d)

    def eval_seeds(self) -> list[int]:
        return list(range(EVAL_SEED_BASE, EVAL_SEED_BASE + self.eval_episodes))


def collection_seeds(round_index: int, n: int) -> list[int]:
    """Episode seeds of collection round ``round_index`` (0 is the warm-boot round)."""
    base = COLLECT_SEED_BASE + 10_000 * round_index
    return list(range(base, base + n))


@dataclass
class SorlState:
    tau: int
    mu_s: Actor
    q_s: Critic
    actors: list                 # mu_0 .. mu_tau
    critics: list                # Q_0 .. Q_tau
    dataset: TaggedDataset
    v_safe_eval: float
    metrics: list = field(default_factory=list)

    @property
    def actor(self) -> Actor:
        return self.actors[-1]

    @property
    def critic(self) -> Critic:
        return self.critics[-1]


def _seed(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def warm_boot(market: Market, mu_s: Actor, q_s: Critic, episodes: int, vcql: VcqlConfig,
              seed: int, sorl: SorlConfig | None = None) -> SorlState:
    """Collect the safe round with ``mu_s`` and train (mu_0, Q_0) anchored to ``q_s``."""
    sorl = sorl or SorlConfig()
    if episodes < 1:
        raise ContractViolation("warm boot needs at least one episode (empty dataset otherwise)")
    ro = simulate(market, mu_s, collection_seeds(0, episodes))
    ds = TaggedDataset()
    ds.add_round("safe", ro.transitions(), mu_s)
    res = train_offline(ds, q_s, vcql, seed * 1000, mu_s.scaling,
                        init_actor=mu_s if sorl.warm_start else None,
                        init_critic=q_s if sorl.warm_start else None)
    eval_seeds = sorl.eval_seeds()
    v_safe = float(simulate(market, mu_s, eval_seeds).discounted_value.mean())
    ev = simulate(market, res.actor, eval_seeds)
    state = SorlState(0, mu_s, q_s, [res.actor], [res.critic], ds, v_safe)
    state.metrics.append({
        "tau": 0, "v_explore": float("nan"), "v_vanilla": float("nan"),
        "v_safe_paired": float(ro.discounted_value.mean()),
        "v_mu": float(ev.discounted_value.mean()), "buycnt_mu": float(ev.buycnt.mean()),
        "v_safe_eval": v_safe, "rr_star": market_rr_star(market, res.actor, eval_seeds),
        "safety_gate": True,
    })
    return state


def sorl_iterate(state: SorlState, market: Market, ser: SerConfig, vcql: VcqlConfig,
                 sorl: SorlConfig, seed: int) -> SorlState:
    """One round: explore with SER around mu_s guided by the latest critic, then retrain."""
    tau = state.tau + 1
    cfg = market.config
    zone = ser.zone(cfg.T, cfg.A_min, cfg.A_max)
    q_prev = state.critic
    explorer = SerPolicy(state.mu_s, q_prev, zone, ser, _seed(seed, 11, tau))
    seeds = collection_seeds(tau, sorl.episodes_per_round)
    ro = simulate(market, explorer, seeds)
    safe = simulate(market, state.mu_s, seeds).discounted_value
    v_explore = float(ro.discounted_value.mean())
    v_vanilla = float("nan")
    if sorl.run_vanilla:
        van = VanillaPolicy(state.mu_s, zone, ser.sigma, _seed(seed, 13, tau))
        v_vanilla = float(simulate(market, van, seeds).discounted_value.mean())
    # behavior queries for the alpha2 term come from the exact collecting policy
    tag_rng = _seed(seed, 12, tau)
    tagger = SerPolicy(state.mu_s, q_prev, zone, ser, tag_rng)
    state.dataset.add_round(f"ser_{tau}", ro.transitions(), tagger)
    res = train_offline(state.dataset, q_prev, vcql, seed * 1000 + tau, state.mu_s.scaling,
                        init_actor=state.actor if sorl.warm_start else None,
                        init_critic=q_prev if sorl.warm_start else None)
    eval_seeds = sorl.eval_seeds()
    ev = simulate(market, res.actor, eval_seeds)
    v_safe_paired = float(safe.mean())
    gate = v_explore >= (1.0 - ser.eps_fraction) * v_safe_paired
    state.actors.append(res.actor)
    state.critics.append(res.critic)
    state.tau = tau
    state.metrics.append({
        "tau": tau, "v_explore": v_explore, "v_vanilla": v_vanilla, "v_safe_paired": v_safe_paired,
        "v_mu": float(ev.discounted_value.mean()), "buycnt_mu": float(ev.buycnt.mean()),
        "v_safe_eval": state.v_safe_eval, "rr_star": market_rr_star(market, res.actor, eval_seeds),
        "safety_gate": bool(gate),
    })
    return state


def converged(metrics: list[dict], tol: float) -> bool:
    """True when the relative change of V(mu_tau) stayed below ``tol`` for two iterations."""
    if tol <= 0 or len(metrics) < 3:
        return False
    v = [m["v_mu"] for m in metrics[-3:]]
    return all(abs(b - a) < tol * abs(a) for a, b in zip(v, v[1:]))


def run_sorl(market: Market, mu_s: Actor, q_s: Critic, ser: SerConfig, vcql: VcqlConfig,
             sorl: SorlConfig, seed: int, out_dir=None) -> SorlState:
    """Warm boot plus up to ``sorl.iterations`` rounds; optionally persist CSV and checkpoints.

    Layout under ``out_dir``: ``iterations.csv``, ``iter_<tau>/actor.ckpt``,
    ``iter_<tau>/critic.ckpt`` and ``iter_<tau>/data.jsonl`` (the round collected
    in that iteration, tagged).
    """
    state = warm_boot(market, mu_s, q_s, sorl.warm_boot_episodes, vcql, seed, sorl)
    if out_dir is not None:
        _persist(state, Path(out_dir))
    while state.tau < sorl.iterations and not converged(state.metrics, sorl.convergence_tol):
        state = sorl_iterate(state, market, ser, vcql, sorl, seed)
        if out_dir is not None:
            _persist(state, Path(out_dir))
    return state


def _persist(state: SorlState, out: Path) -> None:
    d = out / f"iter_{state.tau}"
    d.mkdir(parents=True, exist_ok=True)
    state.actor.save(d / "actor.ckpt", {"tau": state.tau})
    state.critic.save(d / "critic.ckpt", {"tau": state.tau})
    rnd = state.dataset.rounds[-1]
    write_jsonl(d / "data.jsonl", rnd.data.records(rnd.tag), header={"tag": rnd.tag})
    write_rows(out / "iterations.csv", state.metrics)
