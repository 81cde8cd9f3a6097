"""Post-hoc rank analysis: component power, shrinkage statistics, pruning.

The power of component r is the summed squared factor value over all
observed coordinates and modes. A component is pruned when its power is
negligible next to the strongest component AND its shrinkage precision
E[lambda_r] is large relative to the most-retained component's. Analysis is
read-only; pruning returns a reduced copy of the model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import ObservationSet
from .model import ModelConfig, OdeCpModel, PriorHyper, evaluate_factors


class DegenerateModelError(ValueError):
    """Every component met the pruning criterion."""


@dataclass(frozen=True)
class RankReport:
    """Per-rank shrinkage statistics and the pruning decision."""

    lambda_mean: np.ndarray          # E[lambda_r] = alpha_r / beta_r
    inv_lambda_mean: np.ndarray      # E[1/lambda_r] = beta_r/(alpha_r - 1), NaN if alpha <= 1
    inv_lambda_plugin: np.ndarray    # beta_r / alpha_r (plug-in 1/E[lambda])
    power: np.ndarray                # P_r = sum_n sum_k g_r^2
    active: np.ndarray               # bool mask of retained components
    theta_power: float
    theta_lambda: float

    @property
    def revealed_rank(self) -> int:
        return int(np.sum(self.active))

    @property
    def active_ranks(self) -> np.ndarray:
        return np.flatnonzero(self.active)


def component_power(model: OdeCpModel, data: ObservationSet,
                    method: str = "rk4", step: float | None = None) -> np.ndarray:
    """P_r = sum over observations and modes of the squared factor values."""
    g_list = evaluate_factors(model, data.indexes, data.times, method, step)
    power = np.zeros(model.rank)
    for g in g_list:
        power += np.sum(g * g, axis=0)
    return power


def reveal_rank(model: OdeCpModel, data: ObservationSet,
                theta_power: float = 1e-2, theta_lambda: float = 10.0,
                method: str = "rk4", step: float | None = None,
                power: np.ndarray | None = None) -> RankReport:
    """Decide which components survive.

    Component r is pruned iff P_r < theta_power * max_r P_r and
    E[lambda_r] > theta_lambda * min_r E[lambda_r].
    """
    if power is None:
        power = component_power(model, data, method, step)
    lam = model.vs.lambda_mean
    alpha = model.vs.alpha
    beta = model.vs.beta
    inv_mean = np.where(alpha > 1.0, beta / np.where(alpha > 1.0, alpha - 1.0, 1.0),
                        np.nan)
    small_power = power < theta_power * np.max(power)
    large_lambda = lam > theta_lambda * np.min(lam)
    active = ~(small_power & large_lambda)
    if not np.any(active):
        raise DegenerateModelError("every component met the pruning criterion")
    return RankReport(lambda_mean=lam, inv_lambda_mean=inv_mean,
                      inv_lambda_plugin=beta / alpha, power=power,
                      active=active, theta_power=theta_power,
                      theta_lambda=theta_lambda)


def prune(model: OdeCpModel, active: np.ndarray) -> OdeCpModel:
    """Model restricted to the active components.

    Copies every parameter, slicing the decoder output layers, the
    per-rank variational parameters, and the per-rank priors down to the
    active set.
    """
    active = np.asarray(active)
    if active.dtype == bool:
        active = np.flatnonzero(active)
    active = np.asarray(active, dtype=np.intp)
    if active.size == 0:
        raise ValueError("active set is empty")
    if np.any(active < 0) or np.any(active >= model.rank):
        raise ValueError("active set out of range")

    new_rank = active.size
    config = replace(model.config, rank=new_rank)
    prior = PriorHyper(model.prior.a0[active], model.prior.b0[active],
                       model.prior.c0, model.prior.d0)
    reduced = OdeCpModel(config, prior=prior)

    old_params = model.parameters()
    new_params = reduced.parameters()
    for name, arr in new_params.items():
        src = old_params[name]
        if arr.shape == src.shape:
            arr[...] = src
        elif name.endswith(".w" + str(_last_layer(model, name))) and ".decoder." in name:
            arr[...] = src[:, active]
        elif name.endswith(".b" + str(_last_layer(model, name))) and ".decoder." in name:
            arr[...] = src[:, active]
        elif name in ("vs.log_alpha", "vs.log_beta"):
            arr[...] = src[active]
        else:
            raise ValueError(f"unexpected shape change for {name}")
    return reduced


def _last_layer(model: OdeCpModel, name: str) -> int:
    # decoder layer count = hidden layers + 1 output layer
    return len(model.config.decoder_hidden)
