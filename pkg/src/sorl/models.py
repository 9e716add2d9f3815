"""Market-aware wrappers that turn raw ParamFunctions into a critic Q(s, a) and a policy mu(s).

Both wrappers rescale the raw state triple into O(1) features and add a pacing
feature (budget left per remaining step relative to the nominal per-step
budget). The critic reports values in raw reward units; its network output is
multiplied by ``q_scale``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx import ParamFunction, load_checkpoint, save_checkpoint
from .market import MarketConfig

N_FEATURES = 4


@dataclass(frozen=True)
class Scaling:
    """Input and output normalization shared by actor and critic."""

    B_ref: float
    T: int
    A_min: float
    A_max: float
    q_scale: float = 100.0

    @classmethod
    def from_market(cls, cfg: MarketConfig, q_scale: float = 100.0) -> "Scaling":
        return cls(B_ref=0.5 * (cfg.B_min + cfg.B_max), T=cfg.T, A_min=cfg.A_min,
                   A_max=cfg.A_max, q_scale=q_scale)

    def to_dict(self) -> dict:
        return {"B_ref": self.B_ref, "T": self.T, "A_min": self.A_min, "A_max": self.A_max,
                "q_scale": self.q_scale}

    def features(self, s: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        b = s[:, 0] / self.B_ref
        tau = s[:, 1] / self.T
        used = s[:, 2] / self.B_ref
        # pacing ratio; states with no time left are terminal and only feed masked targets
        pace = np.where(s[:, 1] > 0, s[:, 0] / np.maximum(s[:, 1], 1.0), 0.0) * self.T / self.B_ref
        return np.column_stack([2 * b - 1, 2 * tau - 1, 2 * used - 1, np.clip(pace, 0, 4) - 1])

    @property
    def half_range(self) -> float:
        return 0.5 * (self.A_max - self.A_min)

    def norm_action(self, a: np.ndarray) -> np.ndarray:
        return (np.asarray(a, dtype=float) - self.A_min) / self.half_range - 1.0


class Critic:
    """Q(s, a) in reward units."""

    def __init__(self, net: ParamFunction, scaling: Scaling):
        if net.in_dim != N_FEATURES + 1 or net.out_dim != 1:
            raise ValueError("critic net must map 5 inputs to 1 output")
        self.net = net
        self.scaling = scaling

    @classmethod
    def create(cls, scaling: Scaling, rng: np.random.Generator, hidden=(64, 64)) -> "Critic":
        sizes = (N_FEATURES + 1, *hidden, 1)
        acts = ("tanh",) * len(hidden) + ("identity",)
        return cls(ParamFunction(sizes, acts, rng), scaling)

    def copy(self) -> "Critic":
        return Critic(self.net.copy(), self.scaling)

    @property
    def theta(self) -> np.ndarray:
        return self.net.theta

    @theta.setter
    def theta(self, value: np.ndarray) -> None:
        self.net.theta = value

    def inputs(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.column_stack([self.scaling.features(s), self.scaling.norm_action(a)])

    def __call__(self, s: np.ndarray, a: np.ndarray, theta=None) -> np.ndarray:
        return self.scaling.q_scale * self.net.forward(self.inputs(s, a), theta)[:, 0]

    def forward_cache(self, s, a, theta=None):
        y, cache = self.net.forward_cache(self.inputs(s, a), theta)
        return self.scaling.q_scale * y[:, 0], cache

    def backward(self, cache, dq: np.ndarray, theta=None):
        """Gradients of ``sum(dq * Q)`` w.r.t. parameters and raw actions."""
        g, gx = self.net.backward(cache, self.scaling.q_scale * np.asarray(dq)[:, None], theta)
        return g, gx[:, -1] / self.scaling.half_range

    def grid(self, s: np.ndarray, actions: np.ndarray, theta=None) -> np.ndarray:
        """Q on every (state, action) pair; ``actions`` is (K,) shared or (N, K) per state."""
        s = np.atleast_2d(s)
        n = len(s)
        acts = np.broadcast_to(actions, (n, np.shape(actions)[-1]))
        k = acts.shape[1]
        q = self(np.repeat(s, k, axis=0), acts.reshape(-1), theta)
        return q.reshape(n, k)

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.net, {"role": "critic", "scaling": self.scaling.to_dict(),
                                         **(extra or {})})


class Actor:
    """Deterministic bid policy with a sigmoid head mapped onto [A_min, A_max]."""

    def __init__(self, net: ParamFunction, scaling: Scaling):
        if net.in_dim != N_FEATURES or net.out_dim != 1 or net.activations[-1] != "sigmoid":
            raise ValueError("actor net must map 4 inputs to 1 sigmoid output")
        self.net = net
        self.scaling = scaling

    @classmethod
    def create(cls, scaling: Scaling, rng: np.random.Generator, hidden=(64, 64)) -> "Actor":
        sizes = (N_FEATURES, *hidden, 1)
        acts = ("tanh",) * len(hidden) + ("sigmoid",)
        return cls(ParamFunction(sizes, acts, rng), scaling)

    def copy(self) -> "Actor":
        return Actor(self.net.copy(), self.scaling)

    @property
    def theta(self) -> np.ndarray:
        return self.net.theta

    @theta.setter
    def theta(self, value: np.ndarray) -> None:
        self.net.theta = value

    def __call__(self, s: np.ndarray, t: int | None = None, theta=None) -> np.ndarray:
        y = self.net.forward(self.scaling.features(s), theta)[:, 0]
        return self.scaling.A_min + 2 * self.scaling.half_range * y

    def forward_cache(self, s, theta=None):
        y, cache = self.net.forward_cache(self.scaling.features(s), theta)
        return self.scaling.A_min + 2 * self.scaling.half_range * y[:, 0], cache

    def backward(self, cache, da: np.ndarray, theta=None) -> np.ndarray:
        g, _ = self.net.backward(cache, 2 * self.scaling.half_range * np.asarray(da)[:, None],
                                 theta, need_input_grad=False)
        return g

    def save(self, path, extra: dict | None = None) -> None:
        save_checkpoint(path, self.net, {"role": "actor", "scaling": self.scaling.to_dict(),
                                         **(extra or {})})


def load_model(path):
    """Load an Actor or Critic saved with ``.save``."""
    net, extra = load_checkpoint(path)
    scaling = Scaling(**extra["scaling"])
    if extra.get("role") == "actor":
        return Actor(net, scaling)
    if extra.get("role") == "critic":
        return Critic(net, scaling)
    raise ValueError(f"{path} has no actor/critic role")
