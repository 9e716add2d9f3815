"""Safety zone, Lipschitz constant estimation, and the two exploration policies.

Exploration only happens inside a window of steps ``[t1, t2]`` and only in
``[mu_s(s) - xi, mu_s(s) + xi]`` clipped to the action bounds. The SER policy
reweights uniform candidates in that interval by a Gaussian factor around
``mu_s(s)`` times ``exp(Q(s, a) / lam)``; the vanilla policy is a truncated
Gaussian on the same interval.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np
from scipy.stats import truncnorm

from .market import ContractViolation, Market, resolve_wins, simulate

QFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def safety_radius(eps_s: float, L_Q: float, gamma: float, t1: int, dT: int) -> float:
    """Largest zone half-width whose value loss bound stays within ``eps_s``."""
    if eps_s <= 0 or L_Q <= 0 or dT <= 0 or t1 < 0:
        raise ContractViolation("safety_radius needs eps_s, L_Q, dT > 0 and t1 >= 0")
    if not 0 < gamma <= 1:
        raise ContractViolation("gamma must lie in (0, 1]")
    return eps_s / (L_Q * gamma ** t1 * dT)


def value_gap_bound(xi: float, gamma: float, t1: int, dT: int, L_Q: float) -> float:
    return xi * gamma ** t1 * L_Q * dT


@dataclass(frozen=True)
class SafetyZone:
    xi: float
    t1: int
    t2: int
    A_min: float
    A_max: float

    def __post_init__(self):
        if self.xi < 0:
            raise ContractViolation("zone radius must be >= 0")
        if not 0 <= self.t1 <= self.t2:
            raise ContractViolation("need 0 <= t1 <= t2")

    @property
    def dT(self) -> int:
        return self.t2 - self.t1 + 1

    def in_window(self, t: int) -> bool:
        return self.t1 <= t <= self.t2

    def bounds(self, center):
        lo = np.maximum(np.asarray(center, dtype=float) - self.xi, self.A_min)
        hi = np.minimum(np.asarray(center, dtype=float) + self.xi, self.A_max)
        return lo, hi


@dataclass(frozen=True)
class SerConfig:
    sigma: float = 1.0
    lam: float = 0.1
    M: int = 1000
    xi: float = 0.5
    eps_fraction: float = 0.05
    t1: int = 0
    t2: int | None = None

    def __post_init__(self):
        if self.sigma <= 0 or self.lam <= 0 or self.M < 1 or self.xi < 0 or self.eps_fraction <= 0:
            raise ContractViolation("SerConfig needs sigma, lam, eps_fraction > 0, M >= 1, xi >= 0")

    def zone(self, T: int, A_min: float, A_max: float) -> SafetyZone:
        return SafetyZone(self.xi, self.t1, T - 1 if self.t2 is None else self.t2, A_min, A_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SerConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ContractViolation(f"unknown SerConfig keys: {sorted(unknown)}")
        return cls(**d)


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def gaussian_weights(actions: np.ndarray, center, sigma: float) -> np.ndarray:
    """Truncated-Gaussian weights of candidate actions (normalized per row)."""
    c = np.asarray(center, dtype=float)[..., None]
    return _normalize_log(-(actions - c) ** 2 / (2 * sigma ** 2))


def ser_weights_batch(states: np.ndarray, centers: np.ndarray, q: QFunction, sigma: float,
                      lam: float, xi: float, M: int, rng: np.random.Generator,
                      A_min: float, A_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Candidates (E, M) and their probabilities (E, M) for a batch of states.

    A collapsed zone (zero width after clipping) yields the center with probability 1.
    """
    if M < 1:
        raise ContractViolation("M must be >= 1")
    states = np.atleast_2d(states)
    centers = np.asarray(centers, dtype=float).reshape(-1)
    lo = np.maximum(centers - xi, A_min)
    hi = np.minimum(centers + xi, A_max)
    E = len(centers)
    acts = lo[:, None] + (hi - lo)[:, None] * rng.random((E, M))
    qv = np.asarray(q(np.repeat(states, M, axis=0), acts.reshape(-1)), dtype=float).reshape(E, M)
    logw = -(acts - centers[:, None]) ** 2 / (2 * sigma ** 2) + qv / lam
    probs = _normalize_log(logw)
    flat = ~(hi > lo)
    if flat.any():
        acts[flat] = np.clip(centers[flat], A_min, A_max)[:, None]
        probs[flat] = 0.0
        probs[flat, 0] = 1.0
    return acts, probs


def ser_weights(s, center: float, q: QFunction, sigma: float, lam: float, xi: float, M: int,
                rng: np.random.Generator, A_min: float, A_max: float):
    """Single-state version of :func:`ser_weights_batch` returning (actions, probabilities)."""
    acts, probs = ser_weights_batch(np.atleast_2d(s), [center], q, sigma, lam, xi, M, rng,
                                    A_min, A_max)
    return acts[0], probs[0]


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((len(probs), 1)) * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), probs.shape[1] - 1)


class SerPolicy:
    """Stochastic exploration policy around ``mu_s`` steered by a critic."""

    def __init__(self, mu_s, q: QFunction, zone: SafetyZone, cfg: SerConfig,
                 rng: np.random.Generator):
        self.mu_s, self.q, self.zone, self.cfg, self.rng = mu_s, q, zone, cfg, rng

    def __call__(self, states: np.ndarray, t: int) -> np.ndarray:
        centers = np.clip(self.mu_s(states, t), self.zone.A_min, self.zone.A_max)
        if not self.zone.in_window(t) or self.zone.xi == 0:
            return centers
        acts, probs = ser_weights_batch(states, centers, self.q, self.cfg.sigma, self.cfg.lam,
                                        self.zone.xi, self.cfg.M, self.rng,
                                        self.zone.A_min, self.zone.A_max)
        pick = _categorical(probs, self.rng)
        return acts[np.arange(len(acts)), pick]


class VanillaPolicy:
    """Truncated Gaussian N(mu_s(s), sigma^2) restricted to the zone."""

    def __init__(self, mu_s, zone: SafetyZone, sigma: float, rng: np.random.Generator):
        self.mu_s, self.zone, self.sigma, self.rng = mu_s, zone, sigma, rng

    def __call__(self, states: np.ndarray, t: int) -> np.ndarray:
        centers = np.clip(self.mu_s(states, t), self.zone.A_min, self.zone.A_max)
        if not self.zone.in_window(t) or self.zone.xi == 0 or self.sigma <= 1e-12:
            return centers
        lo, hi = self.zone.bounds(centers)
        out = centers.copy()
        ok = hi > lo
        if ok.any():
            c = centers[ok]
            out[ok] = truncnorm.rvs((lo[ok] - c) / self.sigma, (hi[ok] - c) / self.sigma,
                                    loc=c, scale=self.sigma, random_state=self.rng)
        return np.clip(out, lo, hi)


def ser_action(s, t: int, mu_s, q: QFunction, zone: SafetyZone, cfg: SerConfig,
               rng: np.random.Generator) -> float:
    return float(SerPolicy(mu_s, q, zone, cfg, rng)(np.atleast_2d(s), t)[0])


def vanilla_action(s, t: int, mu_s, zone: SafetyZone, sigma: float,
                   rng: np.random.Generator) -> float:
    return float(VanillaPolicy(mu_s, zone, sigma, rng)(np.atleast_2d(s), t)[0])


@dataclass
class LipschitzConstants:
    k1: float
    k2: float
    k3: float
    k4: float
    L_r: float
    L_Q: float

    def as_dict(self) -> dict:
        return asdict(self)


def lipschitz_from_k(k1, k2, k3, k4, v_M, p_M, gamma) -> LipschitzConstants:
    L_r = (k1 + k2) * v_M
    L_Q = (v_M + gamma * (k3 + k4) * p_M) * (k1 + k2)
    return LipschitzConstants(k1, k2, k3, k4, L_r, L_Q)


def win_count_envelope(counts: np.ndarray, bids: np.ndarray) -> float:
    """Smallest k with counts(a) <= k * a and |counts(a') - counts(a)| <= k * |a' - a| on the grid.

    ``counts`` has the bid grid on its last axis.
    """
    counts = np.asarray(counts, dtype=float)
    through_origin = np.max(counts / bids)
    slopes = np.abs(np.diff(counts, axis=-1)) / np.diff(bids)
    return float(max(through_origin, slopes.max() if slopes.size else 0.0))


def stage_counts(imps, bids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stage-1 and two-stage pass counts of one impression list at every grid bid."""
    n1 = (bids[:, None] * imps.v1[None, :] >= imps.p1[None, :])
    n2 = n1 & (bids[:, None] * imps.v2[None, :] >= imps.p2[None, :])
    return n1.sum(axis=1), n2.sum(axis=1)


def estimate_constants(market: Market, mu, q: QFunction, episode_seeds, n_bids: int = 200,
                       n_states: int = 256, rel_h: float = 1e-3, rng=None,
                       return_details: bool = False):
    """Empirical k1..k4 and the derived L_r, L_Q.

    k1, k2: envelopes of stage-1 / two-stage win counts over a bid grid on every
    step of the given episodes. k3, k4: max central-difference slopes of ``q``
    w.r.t. budget left and budget consumed on states visited by ``mu``, at
    grid actions.
    """
    cfg = market.config
    seeds = list(episode_seeds)
    if not seeds or n_bids < 2 or n_states < 1:
        raise ContractViolation("estimate_constants needs episodes, >= 2 bids and >= 1 state")
    rng = rng or np.random.default_rng(0)
    bids = np.linspace(cfg.A_min, cfg.A_max, n_bids)
    c1, c2 = [], []
    for s in seeds:
        for imps in market.stream(s):
            a, b = stage_counts(imps, bids)
            c1.append(a)
            c2.append(b)
    k1 = win_count_envelope(np.array(c1), bids)
    k2 = win_count_envelope(np.array(c2), bids)
    ro = simulate(market, mu, seeds)
    visited = ro.states[ro.alive]
    pick = rng.choice(len(visited), size=min(n_states, len(visited)), replace=False)
    states = visited[pick]
    acts = rng.uniform(cfg.A_min, cfg.A_max, size=len(states))
    h = rel_h * max(cfg.B_max, 1.0)
    slopes = []
    for comp in (0, 2):
        e = np.zeros(3)
        e[comp] = h
        d = (np.asarray(q(states + e, acts)) - np.asarray(q(states - e, acts))) / (2 * h)
        slopes.append(float(np.max(np.abs(d))))
    consts = lipschitz_from_k(k1, k2, slopes[0], slopes[1], cfg.v_M, cfg.p_M, cfg.gamma)
    if return_details:
        return consts, {"bids": bids, "stage1_counts": np.array(c1), "stage2_counts": np.array(c2),
                        "states": states}
    return consts


def reward_slopes(imps, budget: float, bids: np.ndarray) -> np.ndarray:
    """|r(a_{i+1}) - r(a_i)| / (a_{i+1} - a_i) along a bid grid at a fixed state."""
    r = np.array([imps.v[resolve_wins(a, imps, budget)[1]].sum() for a in bids])
    return np.abs(np.diff(r)) / np.diff(bids)
