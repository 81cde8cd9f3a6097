"""Closed-form Student-t predictions at arbitrary continuous coordinates.

The predictive law at a coordinate is a location/scale Student-t whose
mean is the reconstruction, whose degrees of freedom are twice the noise
posterior shape, and whose precision-style scale is

    s = 1 / (iota/rho + sigma2 * sum_j |prod_{k != j} g^k|^2),

i.e. the inverse of the noise posterior mean variance plus the
leave-one-mode-out factor energies weighted by the shared trajectory
variance. Queries are batched into a single trajectory roll.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import t as _student_t

from .data import ObservationSet
from .model import OdeCpModel, evaluate_factors
from .specialmath import DomainError, student_t_logpdf


@dataclass(frozen=True)
class PredictiveLaw:
    """Student-t parameters (precision-style scale) at one coordinate."""

    mean: float
    scale: float
    dof: float

    def __post_init__(self):
        if not (self.scale > 0.0 and self.dof > 0.0):
            raise DomainError("PredictiveLaw needs scale > 0 and dof > 0")

    def logpdf(self, y) -> float:
        return student_t_logpdf(y, self.mean, self.scale, self.dof)

    @property
    def std_scale(self) -> float:
        """Scale of the equivalent y = mean + std_scale * T_dof form."""
        return 1.0 / np.sqrt(self.scale)


def predictive_params(model: OdeCpModel, indexes, times,
                      method: str = "rk4", step: float | None = None):
    """Vectorized Student-t parameters: arrays (mean, scale, dof)."""
    indexes = np.atleast_2d(np.asarray(indexes, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64).ravel()
    g_list = evaluate_factors(model, indexes, times, method, step)
    g = np.stack(g_list)                      # (K, Q, R)
    if not np.all(np.isfinite(g)):
        raise DomainError("non-finite trajectory at a query coordinate")
    prod_all = np.prod(g, axis=0)             # (Q, R)
    mean = np.sum(prod_all, axis=1)           # (Q,)

    n_modes = g.shape[0]
    leave_out = np.zeros(times.size)
    for j in range(n_modes):
        others = np.prod(np.delete(g, j, axis=0), axis=0)
        leave_out += np.sum(others * others, axis=1)

    vs = model.vs
    denom = vs.iota / vs.rho + vs.sigma2 * leave_out
    scale = 1.0 / denom
    dof = np.full(times.size, 2.0 * vs.rho)
    return mean, scale, dof


def predict(model: OdeCpModel, indexes, times, method: str = "rk4",
            step: float | None = None) -> list[PredictiveLaw]:
    """Predictive laws for a batch of coordinates (one trajectory roll)."""
    mean, scale, dof = predictive_params(model, indexes, times, method, step)
    return [PredictiveLaw(float(m), float(s), float(v))
            for m, s, v in zip(mean, scale, dof)]


def predict_interval(law: PredictiveLaw, level: float = 0.95) -> tuple[float, float]:
    """Central interval from Student-t quantiles."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"interval level must be in (0, 1), got {level}")
    q = float(_student_t.ppf(0.5 * (1.0 + level), df=law.dof))
    half = q * law.std_scale
    return law.mean - half, law.mean + half


def evaluate(model: OdeCpModel, test: ObservationSet, method: str = "rk4",
             step: float | None = None,
             against: str = "observed") -> tuple[float, float]:
    """(RMSE, MAE) of the predictive means on a held-out set.

    ``against="clean"`` scores against the noise-free ground truth when the
    set carries it.
    """
    if test.n < 1:
        raise ValueError("test set is empty")
    if against == "clean":
        if test.clean is None:
            raise ValueError("test set has no clean ground truth")
        target = test.clean
    else:
        target = test.values
    mean, _, _ = predictive_params(model, test.indexes, test.times, method, step)
    err = mean - target
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))
