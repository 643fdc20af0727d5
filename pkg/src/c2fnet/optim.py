"""First-order optimizers over name-keyed parameter/gradient registries.

All four step functions update the parameter arrays in place, so a Network's
live weights move without re-binding its registry. Buffers are materialized
lazily (zeros) the first time a parameter is stepped and keep their shapes
forever after.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("sgd", "adam", "adamw", "rmsprop")


@dataclass
class TrainHyper:
    lr0: float = 0.001
    momentum: float = 0.97
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    alpha: float = 0.99
    eps: float = 1e-8
    epochs: int = 500
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class OptimizerState:
    """Step counter plus per-parameter buffers, keyed like the registry.

    sgd uses v (velocity); adam/adamw use m and s (first/second moments);
    rmsprop uses s (squared-gradient average) and v (momentum).
    """

    kind: str
    t: int = 0
    v: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    s: dict[str, np.ndarray] = field(default_factory=dict)


def make_optimizer(kind: str, hyper: TrainHyper | None = None) -> OptimizerState:
    if kind not in KINDS:
        raise ValueError(f"unknown optimizer kind: {kind!r} (expected one of {KINDS})")
    return OptimizerState(kind=kind)


def optimizer_step(params, grads, state: OptimizerState, h: TrainHyper) -> None:
    """Dispatch to the step function matching state.kind."""
    _STEPS[state.kind](params, grads, state, h)


def _check_keys(params, grads) -> None:
    if params.keys() != grads.keys():
        raise KeyError("parameter and gradient registries are not key-aligned")


def _buf(d: dict, name: str, like: np.ndarray) -> np.ndarray:
    b = d.get(name)
    if b is None:
        b = d[name] = np.zeros_like(like)
    return b


def sgd_step(params, grads, state: OptimizerState, h: TrainHyper) -> None:
    """g' = g + wd*w; v <- momentum*v + g'; w <- w - lr*v."""
    _check_keys(params, grads)
    state.t += 1
    for name, w in params.items():
        g = grads[name]
        if h.weight_decay != 0.0:
            g = g + h.weight_decay * w
        v = _buf(state.v, name, w)
        v *= h.momentum
        v += g
        w -= h.lr0 * v


def adam_step(params, grads, state: OptimizerState, h: TrainHyper) -> None:
    """Bias-corrected first/second moments; L2 decay folded into g when wd > 0."""
    _check_keys(params, grads)
    state.t += 1
    b1, b2 = h.betas
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, w in params.items():
        g = grads[name]
        if h.weight_decay != 0.0:
            g = g + h.weight_decay * w
        m = _buf(state.m, name, w)
        s = _buf(state.s, name, w)
        m *= b1
        m += (1.0 - b1) * g
        s *= b2
        s += (1.0 - b2) * (g * g)
        w -= h.lr0 * (m / bc1) / (np.sqrt(s / bc2) + h.eps)


def adamw_step(params, grads, state: OptimizerState, h: TrainHyper) -> None:
    """Adam with decoupled decay: w <- w - lr*wd*w applied outside the moments."""
    _check_keys(params, grads)
    state.t += 1
    b1, b2 = h.betas
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, w in params.items():
        g = grads[name]
        if h.weight_decay != 0.0:
            w -= (h.lr0 * h.weight_decay) * w
        m = _buf(state.m, name, w)
        s = _buf(state.s, name, w)
        m *= b1
        m += (1.0 - b1) * g
        s *= b2
        s += (1.0 - b2) * (g * g)
        w -= h.lr0 * (m / bc1) / (np.sqrt(s / bc2) + h.eps)


def rmsprop_step(params, grads, state: OptimizerState, h: TrainHyper) -> None:
    """Uncentered RMSprop with optional momentum on the scaled update."""
    _check_keys(params, grads)
    state.t += 1
    for name, w in params.items():
        g = grads[name]
        if h.weight_decay != 0.0:
            g = g + h.weight_decay * w
        s = _buf(state.s, name, w)
        s *= h.alpha
        s += (1.0 - h.alpha) * (g * g)
        u = h.lr0 * g / (np.sqrt(s) + h.eps)
        if h.momentum != 0.0:
            v = _buf(state.v, name, w)
            v *= h.momentum
            v += u
            w -= v
        else:
            w -= u


_STEPS = {
    "sgd": sgd_step,
    "adam": adam_step,
    "adamw": adamw_step,
    "rmsprop": rmsprop_step,
}
