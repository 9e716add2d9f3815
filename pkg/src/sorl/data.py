"""Transition records, round-tagged datasets and their line-delimited serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np


@dataclass(frozen=True)
class TransitionRecord:
    t: int
    s: tuple
    a: float
    r: float
    cost: float
    s2: tuple
    done: bool
    tag: str = ""

    def to_json(self) -> str:
        d = {"t": self.t, "s": list(self.s), "a": self.a, "r": self.r, "cost": self.cost,
             "s'": list(self.s2), "done": self.done}
        if self.tag:
            d["tag"] = self.tag
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "TransitionRecord":
        d = json.loads(line)
        return cls(int(d["t"]), tuple(d["s"]), float(d["a"]), float(d["r"]), float(d["cost"]),
                   tuple(d["s'"]), bool(d["done"]), d.get("tag", ""))


@dataclass
class Transitions:
    """Columnar batch of transitions."""

    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    cost: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.a)

    def take(self, idx) -> "Transitions":
        return Transitions(self.t[idx], self.s[idx], self.a[idx], self.r[idx],
                           self.cost[idx], self.s2[idx], self.done[idx])

    @classmethod
    def concat(cls, parts: Iterable["Transitions"]) -> "Transitions":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ("t", "s", "a", "r", "cost", "s2", "done")))

    def records(self, tag: str = "") -> list[TransitionRecord]:
        return [TransitionRecord(int(self.t[i]), tuple(map(float, self.s[i])), float(self.a[i]),
                                 float(self.r[i]), float(self.cost[i]),
                                 tuple(map(float, self.s2[i])), bool(self.done[i]), tag)
                for i in range(len(self))]

    @classmethod
    def from_records(cls, recs: list[TransitionRecord]) -> "Transitions":
        return cls(np.array([r.t for r in recs], dtype=int),
                   np.array([r.s for r in recs], dtype=float).reshape(-1, 3),
                   np.array([r.a for r in recs], dtype=float),
                   np.array([r.r for r in recs], dtype=float),
                   np.array([r.cost for r in recs], dtype=float),
                   np.array([r.s2 for r in recs], dtype=float).reshape(-1, 3),
                   np.array([r.done for r in recs], dtype=bool))


def write_jsonl(path, records: Iterable[TransitionRecord], header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}) + "\n")
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_jsonl(path) -> tuple[dict | None, list[TransitionRecord]]:
    header, recs = None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith('{"header"'):
            header = json.loads(line)["header"]
            continue
        recs.append(TransitionRecord.from_json(line))
    return header, recs


@dataclass
class Round:
    tag: str
    data: Transitions
    behavior: Callable[[np.ndarray, int], np.ndarray]
    # one query of the behavior policy at every recorded state, drawn when the round is sealed
    behavior_actions: np.ndarray


@dataclass
class TaggedDataset:
    """Transitions partitioned by collection round, each with its exact behavior policy."""

    rounds: list[Round] = field(default_factory=list)

    def add_round(self, tag: str, data: Transitions, behavior) -> Round:
        if any(r.tag == tag for r in self.rounds):
            raise ValueError(f"round {tag!r} already sealed")
        if len(data) == 0:
            raise ValueError(f"round {tag!r} is empty")
        queries = np.empty(len(data))
        for k in np.unique(data.t):
            m = data.t == k
            queries[m] = behavior(data.s[m], int(k))
        rnd = Round(tag, data, behavior, queries)
        self.rounds.append(rnd)
        return rnd

    def __len__(self) -> int:
        return sum(len(r.data) for r in self.rounds)

    @property
    def tags(self) -> list[str]:
        return [r.tag for r in self.rounds]

    def union(self) -> tuple[Transitions, np.ndarray, np.ndarray]:
        """All transitions, their behavior-query actions and integer round ids."""
        if not self.rounds:
            raise ValueError("empty dataset")
        data = Transitions.concat(r.data for r in self.rounds)
        queries = np.concatenate([r.behavior_actions for r in self.rounds])
        ids = np.concatenate([np.full(len(r.data), i) for i, r in enumerate(self.rounds)])
        return data, queries, ids

    def subset(self, tags: Iterable[str]) -> "TaggedDataset":
        keep = set(tags)
        return TaggedDataset([r for r in self.rounds if r.tag in keep])
