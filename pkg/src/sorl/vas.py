"""Virtual advertising system: a frozen replay of the stage-2 logs of a behavior policy.

Only impressions on which the logging bidder survived stage 1 are stored, with
their stage-2 value and price frozen. Replaying a different policy therefore
never reveals impressions the logger missed in stage 1 and never moves a price,
which is the source of the gap between this environment and the live market.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata, spearmanr

from .market import (BidState, ContractViolation, Impressions, MarketConfig, Rollouts,
                     StepOutcome, auction_step, simulate)


@dataclass(frozen=True)
class VasLogEntry:
    t: int
    v2: float
    p2: float
    v: float
    p: float


@dataclass(frozen=True)
class VasDataset:
    """Stage-1 survivors of one logged episode, grouped by step."""

    steps: tuple          # T tuples of VasLogEntry
    B: float
    T: int

    def __len__(self) -> int:
        return sum(len(s) for s in self.steps)

    def entries(self) -> list[VasLogEntry]:
        return [e for step in self.steps for e in step]

    def step_impressions(self, k: int) -> Impressions:
        """Entries of step k as impressions whose two tests coincide (v1 = v2, p1 = p2)."""
        return _as_single_stage(self.steps[k])

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"header": {"kind": "stage2_logs", "B": self.B, "T": self.T}}) + "\n")
            for e in self.entries():
                fh.write(json.dumps({"t": e.t, "v2": e.v2, "p2": e.p2, "v": e.v, "p": e.p}) + "\n")

    @classmethod
    def read(cls, path) -> "VasDataset":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        header = json.loads(lines[0]).get("header", {})
        if header.get("kind") != "stage2_logs":
            raise ContractViolation(f"{path} is not a stage-2 log file")
        T = int(header["T"])
        buckets: list[list[VasLogEntry]] = [[] for _ in range(T)]
        for ln in lines[1:]:
            d = json.loads(ln)
            buckets[int(d["t"])].append(VasLogEntry(int(d["t"]), d["v2"], d["p2"], d["v"], d["p"]))
        return cls(tuple(tuple(b) for b in buckets), float(header["B"]), T)


def _as_single_stage(entries: Sequence[VasLogEntry]) -> Impressions:
    v2 = np.array([e.v2 for e in entries], dtype=float)
    p2 = np.array([e.p2 for e in entries], dtype=float)
    v = np.array([e.v for e in entries], dtype=float)
    p = np.array([e.p for e in entries], dtype=float)
    return Impressions(v1=v2, v2=v2, v=v, p1=p2, p2=p2, p=p)


def build_vas(logs, B: float, T: int) -> VasDataset:
    """Build a VAS from one episode's per-step logs (``StepLog`` items with stage outcomes).

    Steps never reached by the logger (early budget exhaustion) contribute no entries.
    """
    logs = list(logs)
    if not logs:
        raise ContractViolation("cannot build a VAS from empty logs")
    buckets: list[list[VasLogEntry]] = [[] for _ in range(T)]
    for log in logs:
        imps = log.impressions
        for j in np.flatnonzero(log.stage1):
            buckets[log.t].append(VasLogEntry(int(log.t), float(imps.v2[j]), float(imps.p2[j]),
                                              float(imps.v[j]), float(imps.p[j])))
    return VasDataset(tuple(tuple(b) for b in buckets), float(B), int(T))


def build_vas_suite(rollouts: Rollouts) -> list[VasDataset]:
    """One VAS per episode of a rollout recorded with ``record_impressions=True``."""
    if rollouts.logs is None:
        raise ContractViolation("rollouts were not recorded with impression logs")
    T = rollouts.states.shape[1]
    return [build_vas(rollouts.logs[e], rollouts.budgets[e], T) for e in range(len(rollouts.logs))]


def vas_step(state: BidState, a: float, entries: Sequence[VasLogEntry],
             config: MarketConfig) -> StepOutcome:
    """Single-stage replay step: win iff a * v2 >= p2 and the budget still covers p."""
    return auction_step(state, a, _as_single_stage(entries), config)


class VasMarket:
    """Adapter exposing a suite of VAS datasets through the market interface.

    Episode seed ``i`` replays dataset ``i % len(suite)``, so the batch
    simulator and the trainers run unchanged on replayed data.
    """

    def __init__(self, suite: Sequence[VasDataset], config: MarketConfig):
        if not suite:
            raise ContractViolation("empty VAS suite")
        self.suite = list(suite)
        self.config = config
        self._streams = [tuple(d.step_impressions(k) for k in range(d.T)) for d in self.suite]

    def budget(self, episode_seed: int) -> float:
        return self.suite[int(episode_seed) % len(self.suite)].B

    def stream(self, episode_seed: int):
        return self._streams[int(episode_seed) % len(self.suite)]


@dataclass
class IbooRow:
    name: str
    vas_score: float
    sras_buycnt: float
    vas_rank: float
    sras_rank: float


@dataclass
class IbooReport:
    rows: list
    spearman: float | None    # None when undefined (fewer than two policies or constant scores)

    def as_rows(self) -> list[dict]:
        return [vars(r) for r in self.rows]

    def inversions(self) -> int:
        n = 0
        for i, a in enumerate(self.rows):
            for b in self.rows[i + 1:]:
                if (a.vas_score - b.vas_score) * (a.sras_buycnt - b.sras_buycnt) < 0:
                    n += 1
        return n


def rank_correlation(x: Sequence[float], y: Sequence[float]) -> float | None:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(spearmanr(x, y).statistic)


def iboo_report(policies: dict, suite: Sequence[VasDataset], market, episode_seeds) -> IbooReport:
    """Score each policy by mean R/R* in the VAS suite and by mean BuyCnt in the live market."""
    from .evaluation import ope_rr_star
    names = list(policies)
    vas_scores, buycnts = [], []
    for name in names:
        pol = policies[name]
        vas_scores.append(float(np.mean([ope_rr_star(pol, d, market.config) for d in suite])))
        buycnts.append(float(simulate(market, pol, episode_seeds).buycnt.mean()))
    vr = rankdata([-v for v in vas_scores])
    sr = rankdata([-b for b in buycnts])
    rows = [IbooRow(n, v, b, float(r1), float(r2))
            for n, v, b, r1, r2 in zip(names, vas_scores, buycnts, vr, sr)]
    return IbooReport(rows, rank_correlation(vas_scores, buycnts))
