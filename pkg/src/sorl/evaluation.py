"""Metrics, LP-relaxation oracle, paired A/B comparison and empirical checks of the safety theory."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .explore import (SafetyZone, SerConfig, SerPolicy, estimate_constants, reward_slopes,
                      value_gap_bound)
from .market import ContractViolation, Market, MarketConfig, Rollouts, simulate
from .vas import VasDataset, VasMarket


@dataclass
class MetricsReport:
    """Per-episode means. ROI and CPA are ratios of means, so the identities hold exactly."""

    buycnt: float
    conbdg: float
    roi: float | None
    cpa: float | None
    won_count: float
    value: float
    episodes: int
    buycnt_se: float
    conbdg_se: float
    value_se: float

    def as_dict(self) -> dict:
        return asdict(self)


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def metrics_from_rollouts(ro: Rollouts) -> MetricsReport:
    buy, spend = ro.buycnt, ro.spend
    won = ro.won_counts.sum(axis=1)
    val = ro.discounted_value
    mb, ms, mw = float(buy.mean()), float(spend.mean()), float(won.mean())
    return MetricsReport(mb, ms, mb / ms if ms > 0 else None, ms / mw if mw > 0 else None, mw,
                         float(val.mean()), len(buy), _se(buy), _se(spend), _se(val))


def evaluate(policy, env, episode_seeds: Sequence[int]) -> MetricsReport:
    """Run ``policy`` on every episode seed of a Market (or VasMarket) and aggregate."""
    seeds = list(episode_seeds)
    if not seeds:
        raise ContractViolation("evaluate needs at least one episode")
    return metrics_from_rollouts(simulate(env, policy, seeds))


def lp_relaxation(values: np.ndarray, prices: np.ndarray, budget: float) -> float:
    """Fractional-knapsack optimum: take items by value/price until the budget runs out."""
    values = np.asarray(values, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if budget <= 0 or values.size == 0:
        return 0.0
    order = np.argsort(-values / prices, kind="stable")
    v, p = values[order], prices[order]
    cum = np.cumsum(p)
    full = int(np.searchsorted(cum, budget, side="right"))
    total = float(v[:full].sum())
    if full < len(v):
        spent = cum[full - 1] if full > 0 else 0.0
        total += float(v[full] * (budget - spent) / p[full])
    return total


def replay_value(policy, vas: VasDataset, config: MarketConfig) -> float:
    """Undiscounted reward of ``policy`` replayed in a single VAS episode."""
    return float(simulate(VasMarket([vas], config), policy, [0]).buycnt[0])


def ope_rr_star(policy, vas: VasDataset, config: MarketConfig, budget: float | None = None) -> float:
    """R/R* of a policy in a VAS: replayed reward over the LP optimum of the same entries."""
    if len(vas) == 0:
        raise ContractViolation("empty VAS dataset")
    B = vas.B if budget is None else budget
    ents = vas.entries()
    r_star = lp_relaxation([e.v for e in ents], [e.p for e in ents], B)
    if r_star <= 0:
        raise ContractViolation("R* is zero; ratio undefined")
    vas_b = VasDataset(vas.steps, float(B), vas.T)
    return float(np.clip(replay_value(policy, vas_b, config) / r_star, 0.0, 1.0))


def episode_lp_optimum(market: Market, episode_seed: int) -> float:
    """Hindsight LP optimum over every impression of a live-market episode winnable below A_max."""
    cfg = market.config
    vals, prices = [], []
    for imps in market.stream(episode_seed):
        need = np.maximum(imps.p1 / imps.v1, imps.p2 / imps.v2)
        ok = need <= cfg.A_max
        vals.append(imps.v[ok])
        prices.append(imps.p[ok])
    return lp_relaxation(np.concatenate(vals), np.concatenate(prices), market.budget(episode_seed))


def market_rr_star(market: Market, policy, episode_seeds: Sequence[int]) -> float:
    """Mean over episodes of BuyCnt / hindsight LP optimum in the live market."""
    ro = simulate(market, policy, list(episode_seeds))
    opt = np.array([episode_lp_optimum(market, s) for s in episode_seeds])
    return float(np.mean(np.clip(ro.buycnt / opt, 0.0, 1.0)))


@dataclass
class AbResult:
    metric: str
    a: float
    b: float
    delta_pct: float
    se_pct: float


def ab_compare(policy_a, policy_b, market, episode_seeds: Sequence[int]) -> list[AbResult]:
    """Paired comparison on shared episode seeds: delta% = (m_a - m_b) / m_b per metric."""
    seeds = list(episode_seeds)
    ra, rb = simulate(market, policy_a, seeds), simulate(market, policy_b, seeds)
    out = []
    per_ep = {"buycnt": (ra.buycnt, rb.buycnt), "conbdg": (ra.spend, rb.spend),
              "value": (ra.discounted_value, rb.discounted_value),
              "won_count": (ra.won_counts.sum(1), rb.won_counts.sum(1))}
    for name, (xa, xb) in per_ep.items():
        ma, mb = float(xa.mean()), float(xb.mean())
        d = 100.0 * (ma - mb) / mb if mb else float("nan")
        se = 100.0 * _se(xa - xb) / abs(mb) if mb else float("nan")
        out.append(AbResult(name, ma, mb, d, se))
    ma, mb = metrics_from_rollouts(ra), metrics_from_rollouts(rb)
    for name in ("roi", "cpa"):
        va, vb = getattr(ma, name), getattr(mb, name)
        if va is None or vb is None:
            out.append(AbResult(name, va or float("nan"), vb or float("nan"), float("nan"), float("nan")))
        else:
            out.append(AbResult(name, va, vb, 100.0 * (va - vb) / vb, float("nan")))
    return out


@dataclass
class VerifyGrid:
    xis: tuple = (0.0, 0.25, 0.5, 1.0)
    t1s: tuple = (0, 24, 48)
    dTs: tuple = (8, 24, 48)
    episodes: int = 100
    M: int = 200
    sigma: float = 1.0
    lam: float = 0.1
    n_reward_states: int = 64

    def points(self, T: int):
        return [(xi, t1, dT) for xi, t1, dT in itertools.product(self.xis, self.t1s, self.dTs)
                if t1 + dT <= T]


@dataclass
class VerifyReport:
    constants: dict
    rows: list = field(default_factory=list)        # per grid point
    reward_rows: list = field(default_factory=list)  # per sampled state
    passed: bool = True


def verify_theorems(market: Market, mu_s, q_hat, grid: VerifyGrid, episode_seeds: Sequence[int],
                    const_seeds: Sequence[int] | None = None, seed: int = 0) -> VerifyReport:
    """Check the action-Lipschitz reward bound and the exploration value-gap bound empirically."""
    cfg = market.config
    seeds = list(episode_seeds)[:grid.episodes]
    consts = estimate_constants(market, mu_s, q_hat, const_seeds or seeds[:8],
                                rng=np.random.default_rng([seed, 3]))
    report = VerifyReport(consts.as_dict())
    base = simulate(market, mu_s, seeds)
    v_mu = base.discounted_value
    # reward smoothness on states visited by mu_s
    rng = np.random.default_rng([seed, 4])
    bids = np.linspace(cfg.A_min, cfg.A_max, 200)
    alive = np.argwhere(base.alive)
    for e, k in alive[rng.choice(len(alive), size=min(grid.n_reward_states, len(alive)), replace=False)]:
        imps = market.stream(seeds[e])[k]
        worst = float(reward_slopes(imps, base.states[e, k, 0], bids).max())
        ok = worst <= consts.L_r
        report.reward_rows.append({"episode": int(seeds[e]), "t": int(k), "max_slope": worst,
                                   "L_r": consts.L_r, "pass": ok})
        report.passed &= ok
    for i, (xi, t1, dT) in enumerate(grid.points(cfg.T)):
        zone = SafetyZone(xi, t1, t1 + dT - 1, cfg.A_min, cfg.A_max)
        pol = SerPolicy(mu_s, q_hat, zone, SerConfig(sigma=grid.sigma, lam=grid.lam, M=grid.M, xi=xi),
                        np.random.default_rng([seed, 5, i]))
        v_e = simulate(market, pol, seeds).discounted_value
        gap = abs(float(v_e.mean() - v_mu.mean()))
        bound = value_gap_bound(xi, cfg.gamma, t1, dT, consts.L_Q)
        ok = gap <= bound
        report.rows.append({"xi": xi, "t1": t1, "dT": dT, "v_explore": float(v_e.mean()),
                            "v_safe": float(v_mu.mean()), "gap": gap, "bound": bound, "pass": ok})
        report.passed &= ok
    return report


def offline_seed_sweep(market: Market, dataset, anchor, cfg, seeds: Sequence[int], scaling,
                       eval_seeds: Sequence[int], init_actor=None, init_critic=None) -> list[dict]:
    """Train V-CQL and CQL(H) once per seed on the same dataset and evaluate each result.

    Returns one row per (variant, seed) with the mean eval BuyCnt and discounted value.
    """
    from .vcql import train_offline
    rows = []
    for variant, anc in (("vcql", anchor), ("cql_h", None)):
        for s in seeds:
            res = train_offline(dataset, anc, cfg, int(s), scaling, init_actor=init_actor,
                                init_critic=init_critic)
            ro = simulate(market, res.actor, list(eval_seeds))
            rows.append({"variant": variant, "seed": int(s), "buycnt": float(ro.buycnt.mean()),
                         "value": float(ro.discounted_value.mean())})
    return rows


def sweep_summary(rows: list[dict]) -> dict:
    """Mean and sample std of eval BuyCnt per variant."""
    out = {}
    for variant in sorted({r["variant"] for r in rows}):
        x = np.array([r["buycnt"] for r in rows if r["variant"] == variant])
        out[variant] = {"mean": float(x.mean()), "std": float(x.std(ddof=1)) if len(x) > 1 else 0.0,
                        "n": int(len(x))}
    return out
