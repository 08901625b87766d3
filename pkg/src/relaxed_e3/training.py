"""Losses, the relaxed-weight penalty, optimizers and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .network import Graph, NetworkSpec, Params, backward, batch_graphs, forward, init_params

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def loss_mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_mse_grad(pred, target) -> np.ndarray:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    return 2.0 * (pred - target) / pred.size


def _theta_blocks(spec: NetworkSpec, params: Params):
    for key in spec.relaxed_keys():
        layer = spec.layers[int(key.split(".")[1])]
        for sl in layer.relaxed.slices():
            yield key, sl


def relaxed_penalty(spec: NetworkSpec, params: Params, lam: float) -> float:
    """``lam * sum over layers and (l, p) of ||theta^{l,p}||_2``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return lam * sum(float(np.linalg.norm(params[key][sl])) for key, sl in _theta_blocks(spec, params))


def relaxed_penalty_grad(spec: NetworkSpec, params: Params, lam: float) -> Params:
    """Gradient of :func:`relaxed_penalty`; blocks at exactly zero get a zero subgradient."""
    grads = {key: np.zeros_like(params[key]) for key in spec.relaxed_keys()}
    for key, sl in _theta_blocks(spec, params):
        block = params[key][sl]
        norm = np.linalg.norm(block)
        if norm > 0:
            grads[key][sl] = lam * block / norm
    return grads


# -- optimizers -------------------------------------------------------------


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def state(self) -> dict:
        return {}

    def step(self, params: Params, grads: Params) -> None:
        for key, g in grads.items():
            params[key] -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Params = {}
        self.v: Params = {}

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            m = self.m.setdefault(key, np.zeros_like(g))
            v = self.v.setdefault(key, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[key] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 5e-3
    lam: float = 1e-6
    epochs: int = 2500
    batch_size: Optional[int] = None  # None: full batch
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def make_optimizer(self):
        return SGD(self.lr) if self.optimizer == "sgd" else Adam(self.lr)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    spec: NetworkSpec
    params: Params
    optimizer: object
    step: int = 0
    history: list = field(default_factory=list)


Sample = tuple  # (Graph, target array of shape (num_nodes, dim_out))


def _stack(samples: Sequence[Sample]) -> tuple[Graph, np.ndarray]:
    if len(samples) == 1:
        return samples[0][0], np.asarray(samples[0][1], dtype=float).reshape(samples[0][0].num_nodes, -1)
    graph = batch_graphs([s[0] for s in samples])
    return graph, np.concatenate([np.asarray(s[1], dtype=float).reshape(s[0].num_nodes, -1) for s in samples])


def loss_and_grads(spec: NetworkSpec, params: Params, graph: Graph, target: np.ndarray, lam: float):
    """Data MSE + relaxed penalty, and the gradient of their sum."""
    out, tape = forward(spec, graph, params, record=True)
    data = loss_mse(out, target)
    grads = backward(tape, loss_mse_grad(out, target))
    for key, g in relaxed_penalty_grad(spec, params, lam).items():
        grads[key] += g
    return data + relaxed_penalty(spec, params, lam), data, grads


def dataset_mse(spec: NetworkSpec, params: Params, samples: Sequence[Sample], chunk: int = 500) -> float:
    total, count = 0.0, 0
    for start in range(0, len(samples), chunk):
        graph, target = _stack(samples[start:start + chunk])
        out = forward(spec, graph, params)
        total += float(np.sum((out - target) ** 2))
        count += out.size
    return total / count


def train(spec: NetworkSpec, samples: Sequence[Sample], config: TrainConfig,
          params: Optional[Params] = None,
          callback: Optional[Callable[[int, float], None]] = None) -> TrainState:
    """Minimize MSE + relaxed penalty; ``history`` holds the mean batch data loss per epoch."""
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(spec, rng)
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    state = TrainState(spec, params, config.make_optimizer())
    n = len(samples)
    batch = n if config.batch_size is None else min(config.batch_size, n)
    full = _stack(samples) if batch == n else None
    for epoch in range(config.epochs):
        order = rng.permutation(n) if (config.shuffle and full is None) else np.arange(n)
        losses = []
        for start in range(0, n, batch):
            graph, target = full if full is not None else _stack([samples[i] for i in order[start:start + batch]])
            with np.errstate(over="ignore", invalid="ignore"):  # checked just below
                _, data, grads = loss_and_grads(spec, state.params, graph, target, config.lam)
            if not math.isfinite(data) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss/gradient at epoch {epoch} (loss={data!r}); "
                                       f"try a smaller learning rate")
            state.optimizer.step(state.params, grads)
            state.step += 1
            losses.append(data)
        state.history.append(float(np.mean(losses)))
        if callback is not None:
            callback(epoch, state.history[-1])
    return state
