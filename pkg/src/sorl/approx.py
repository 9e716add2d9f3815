"""Small dense networks with hand-written backprop, Adam, Polyak averaging, gradient checks.

Parameters, optimizer state and returned values are float64. The matrix work
inside forward and backward passes runs at the precision selected with
:func:`compute_precision` (float64 unless changed); float32 is roughly four
times faster on one core and is adequate for training and rollouts, while
gradient checks need float64. A :class:`ParamFunction` keeps all weights in one
flat vector so optimizers, soft updates, finite-difference checks and
checkpoints operate on a single array.
"""
from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

_MAGIC = b"SORLCKPT1\n"
_PRECISION = {"dtype": np.dtype(np.float64)}


def get_precision() -> np.dtype:
    return _PRECISION["dtype"]


def set_precision(dtype) -> None:
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported compute precision {dt}")
    _PRECISION["dtype"] = dt


@contextlib.contextmanager
def compute_precision(dtype):
    """Temporarily run network passes at ``dtype`` (float32 or float64)."""
    old = get_precision()
    set_precision(dtype)
    try:
        yield
    finally:
        _PRECISION["dtype"] = old


def _tanh(z):
    y = np.tanh(z)
    return y, 1.0 - y * y


def _relu(z):
    return np.maximum(z, 0.0), (z > 0).astype(z.dtype)


def _softplus(z):
    y = np.logaddexp(0.0, z)
    return y, 1.0 / (1.0 + np.exp(-z))


def _sigmoid(z):
    y = 0.5 * (1.0 + np.tanh(0.5 * z))
    return y, y * (1.0 - y)


def _identity(z):
    return z, np.ones_like(z)


ACTIVATIONS: dict[str, Callable] = {
    "tanh": _tanh, "relu": _relu, "softplus": _softplus,
    "sigmoid": _sigmoid, "identity": _identity,
}


class ParamFunction:
    """Fully connected network ``x -> y`` with per-layer activations.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``(4, 64, 64, 1)``.
    activations : sequence of str
        One activation name per weight layer (``len(sizes) - 1`` entries).
    rng : numpy Generator, optional
        Source for the fan-in uniform initialization. Without it all
        parameters start at zero.
    final_scale : float
        Half-width of the uniform init of the last layer.
    """

    def __init__(self, sizes: Sequence[int], activations: Sequence[str],
                 rng: np.random.Generator | None = None, final_scale: float = 3e-3):
        self.sizes = tuple(int(s) for s in sizes)
        self.activations = tuple(activations)
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.theta = np.zeros(self.n_params)
        if rng is not None:
            chunks = []
            for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                lim = final_scale if i == len(self.sizes) - 2 else 1.0 / np.sqrt(n_in)
                chunks.append(rng.uniform(-lim, lim, size=(n_in + 1) * n_out))
            self.theta = np.concatenate(chunks)

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def architecture(self) -> dict:
        return {"sizes": list(self.sizes), "activations": list(self.activations)}

    def layers(self, theta: np.ndarray | None = None):
        """Yield (W, b) views into ``theta`` (defaults to own parameters)."""
        theta = self.theta if theta is None else theta
        off = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            W = theta[off:off + n_in * n_out].reshape(n_in, n_out)
            off += n_in * n_out
            b = theta[off:off + n_out]
            off += n_out
            yield W, b

    def copy(self) -> "ParamFunction":
        f = ParamFunction(self.sizes, self.activations)
        f.theta = self.theta.copy()
        return f

    def forward(self, x: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        return self.forward_cache(x, theta)[0]

    __call__ = forward

    def forward_cache(self, x: np.ndarray, theta: np.ndarray | None = None):
        dt = get_precision()
        x = np.asarray(x, dtype=dt)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(f"input dim {x.shape[1]} != {self.in_dim}")
        theta = (self.theta if theta is None else theta).astype(dt, copy=False)
        cache = []
        h = x
        for (W, b), act in zip(self.layers(theta), self.activations):
            z = h @ W + b
            y, dy = ACTIVATIONS[act](z)
            cache.append((h, dy))
            h = y
        return h.astype(np.float64, copy=False), cache

    def backward(self, cache, grad_out: np.ndarray, theta: np.ndarray | None = None,
                 need_input_grad: bool = True):
        """Pull ``dL/dy`` back to ``(dL/dtheta, dL/dx)``."""
        dt = cache[0][0].dtype
        grads = []
        g = np.asarray(grad_out, dtype=dt)
        if g.ndim == 1:
            g = g[:, None]
        theta = (self.theta if theta is None else theta).astype(dt, copy=False)
        layers = list(self.layers(theta))
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            h, dy = cache[i]
            gz = g * dy
            grads.append((h.T @ gz).ravel())
            grads.append(gz.sum(axis=0))
            if i > 0 or need_input_grad:
                g = gz @ W.T
        flat = []
        for i in range(len(layers)):
            gW, gb = grads[2 * (len(layers) - 1 - i)], grads[2 * (len(layers) - 1 - i) + 1]
            flat.extend([gW, gb])
        gx = g.astype(np.float64, copy=False) if need_input_grad else None
        return np.concatenate(flat).astype(np.float64, copy=False), gx


def value_and_grad(f: ParamFunction, x: np.ndarray, loss_of_output, theta=None):
    """Evaluate a scalar loss of ``f(x)`` and its gradient w.r.t. parameters and inputs.

    ``loss_of_output(y)`` must return ``(loss, dloss/dy)``.
    """
    y, cache = f.forward_cache(x, theta)
    loss, gy = loss_of_output(y)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    gtheta, gx = f.backward(cache, gy, theta)
    return float(loss), gtheta, gx


def central_difference(fn: Callable[[np.ndarray], float], theta: np.ndarray,
                       h: float = 1e-5) -> np.ndarray:
    theta = np.array(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = fn(theta)
        theta[i] = old - h
        fm = fn(theta)
        theta[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max_i |g_i - n_i| / max(|g_i| + |n_i|, floor), the usual symmetric form."""
    num = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(num / den))


@dataclass
class OptimizerState:
    """Adam moment accumulators for one parameter vector."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step_count: int = 0

    @classmethod
    def for_params(cls, n: int, lr: float = 1e-4, **kw) -> "OptimizerState":
        return cls(lr=lr, m=np.zeros(n), v=np.zeros(n), **kw)


def optimizer_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One Adam update; mutates the moment buffers in ``state`` and returns new params."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("shape mismatch between params, grads and optimizer state")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1 - b1) * grads
    state.v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = state.m / (1 - b1 ** state.step_count)
    v_hat = state.v / (1 - b2 ** state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def soft_update(target: ParamFunction, online: ParamFunction, rate: float) -> ParamFunction:
    if target.architecture() != online.architecture():
        raise ValueError("soft_update needs identical architectures")
    target.theta = (1.0 - rate) * target.theta + rate * online.theta
    return target


def save_checkpoint(path, f: ParamFunction, extra: dict | None = None) -> None:
    header = {"architecture": f.architecture(), "n_params": f.n_params, "dtype": "<f8"}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(f.theta, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamFunction, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path} is not a parameter checkpoint")
    off = len(_MAGIC)
    n = int.from_bytes(raw[off:off + 8], "little")
    header = json.loads(raw[off + 8:off + 8 + n])
    arch = header["architecture"]
    f = ParamFunction(arch["sizes"], arch["activations"])
    theta = np.frombuffer(raw[off + 8 + n:], dtype="<f8")
    if theta.size != header["n_params"]:
        raise ValueError("checkpoint truncated")
    f.theta = theta.astype(float)
    return f, header.get("extra", {})
