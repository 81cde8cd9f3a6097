"""Joint gradient training of the mode networks and variational state.

Each optimizer step rebuilds the initial state tables, rolls the latent
trajectories across the full timestamp grid, gathers the factor values for
the (mini-)batch, evaluates the negated objective, and takes one Adam step
on every parameter simultaneously. Mini-batches are sampled over
observations; the trajectory roll always covers the full grid.

The ablation objective ("rmse") minimizes the plain reconstruction error
with the variational state frozen, which disables rank shrinkage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .data import ObservationSet
from .model import OdeCpModel, build_elbo, build_squared_error
from .odeint import IntegrationError
from .specialmath import DomainError

OBJECTIVES = ("elbo", "rmse")


class TrainingError(RuntimeError):
    """Training diverged (non-finite objective)."""


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 5e-3
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    method: str = "rk4"
    step: float | None = None
    objective: str = "elbo"
    clip_norm: float = 100.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, arr in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


@dataclass
class TrainHistory:
    """Per-epoch objective, posterior lambda means, and component powers."""

    epochs: list[int] = field(default_factory=list)
    elbo: list[float] = field(default_factory=list)
    lambda_mean: list[np.ndarray] = field(default_factory=list)
    power: list[np.ndarray] = field(default_factory=list)

    def append(self, epoch: int, objective: float, lam: np.ndarray,
               power: np.ndarray) -> None:
        self.epochs.append(epoch)
        self.elbo.append(objective)
        self.lambda_mean.append(lam)
        self.power.append(power)

    def extend(self, other: "TrainHistory") -> None:
        self.epochs.extend(other.epochs)
        self.elbo.extend(other.elbo)
        self.lambda_mean.extend(other.lambda_mean)
        self.power.extend(other.power)


def _component_power_from(g_list, scale: float) -> np.ndarray:
    total = None
    for g in g_list:
        p = np.sum(g.value * g.value, axis=0)
        total = p if total is None else total + p
    return total * scale


def train(data: ObservationSet, model: OdeCpModel, cfg: TrainConfig,
          start_epoch: int = 0, on_epoch=None) -> tuple[OdeCpModel, TrainHistory]:
    """Optimize the model on the data; returns the model and its history."""
    if data.n < 1:
        raise ValueError("training data is empty")
    if cfg.objective == "rmse":
        params = model.network_parameters()
    else:
        params = model.parameters()
    adam = Adam(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()

    batch = cfg.batch_size
    if batch is None or batch >= data.n:
        batches_of = [None]
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        if batch is not None and batch < data.n:
            order = rng.permutation(data.n)
            batches_of = [order[i:i + batch] for i in range(0, data.n, batch)]
        epoch_obj = 0.0
        lam = None
        power = None
        for rows in batches_of:
            tape = Tape()
            try:
                if cfg.objective == "rmse":
                    loss, build = build_squared_error(
                        data, model, tape, cfg.method, cfg.step, rows)
                    objective = -loss.value.item()
                else:
                    build = build_elbo(data, model, tape, cfg.method, cfg.step,
                                       rows)
                    loss = ad.scale(build.elbo, -1.0)
                    objective = build.elbo.value.item()
            except (DomainError, IntegrationError) as exc:
                raise TrainingError(f"diverged at epoch {epoch}: {exc}") from exc
            if not np.isfinite(objective):
                raise TrainingError(f"non-finite objective at epoch {epoch}")
            ad.backward(loss)
            grads = {name: ad.grad_of(build.leaves[name]) for name in params}
            clip_global_norm(grads, cfg.clip_norm)
            adam.step(grads)
            epoch_obj += objective
            n_rows = data.n if rows is None else rows.size
            power = _component_power_from(build.g_list, data.n / n_rows)
            lam = model.vs.lambda_mean
        history.append(epoch, epoch_obj / len(batches_of), lam, power)
        if on_epoch is not None:
            on_epoch(epoch, model, history)
    return model, history


def train_ablation(data: ObservationSet, model: OdeCpModel,
                   cfg: TrainConfig) -> tuple[OdeCpModel, TrainHistory]:
    """Shrinkage-disabled run: squared-error objective, frozen variational state."""
    cfg = TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                      batch_size=cfg.batch_size, seed=cfg.seed, method=cfg.method,
                      step=cfg.step, objective="rmse", clip_norm=cfg.clip_norm)
    return train(data, model, cfg)
