"""The probabilistic decomposition model and its closed-form objective.

An entry at continuous coordinate (i_1, ..., i_K, t) is reconstructed as
the rank-summed product of the per-mode factor values g^k(i_k, t). The
variational family puts a shared-variance Gaussian around each factor
value, Gamma posteriors on the per-rank shrinkage precisions lambda_r and
on the noise precision tau. All four objective terms (expected
log-likelihood, trajectory KL, lambda KL, tau KL) are closed-form, so the
objective is evaluated and differentiated exactly on the tape, with no
sampling.

Positivity of the variational parameters is enforced by optimizing their
logarithms; the stored parameter arrays are log-values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Var
from .data import ObservationSet
from .nets import ModeNetwork, encode_initial_state, lift_params
from .odeint import GatherPlan, TimeGrid, gather_g, roll_trajectories
from .specialmath import LOG_2PI, log_gamma


@dataclass
class PriorHyper:
    """Gamma hyperparameters: per-rank (a0, b0) for lambda, (c0, d0) for tau."""

    a0: np.ndarray
    b0: np.ndarray
    c0: float = 1e-6
    d0: float = 1e-6

    def __post_init__(self):
        self.a0 = np.asarray(self.a0, dtype=np.float64).ravel()
        self.b0 = np.asarray(self.b0, dtype=np.float64).ravel()
        if np.any(self.a0 <= 0) or np.any(self.b0 <= 0) or self.c0 <= 0 or self.d0 <= 0:
            raise ValueError("prior hyperparameters must be > 0")

    @classmethod
    def default(cls, rank: int, a0: float = 1e-6, b0: float = 1e-6,
                c0: float = 1e-6, d0: float = 1e-6) -> "PriorHyper":
        return cls(np.full(rank, a0), np.full(rank, b0), c0, d0)


class VariationalState:
    """Log-parameterized positive variational parameters.

    alpha/beta: per-rank Gamma posterior of the shrinkage precisions;
    sigma2: shared trajectory variance; rho/iota: Gamma posterior of the
    noise precision.
    """

    def __init__(self, log_alpha, log_beta, log_sigma2, log_rho, log_iota):
        self.log_alpha = np.asarray(log_alpha, dtype=np.float64).reshape(-1, 1)
        self.log_beta = np.asarray(log_beta, dtype=np.float64).reshape(-1, 1)
        self.log_sigma2 = np.asarray(log_sigma2, dtype=np.float64).reshape(1, 1)
        self.log_rho = np.asarray(log_rho, dtype=np.float64).reshape(1, 1)
        self.log_iota = np.asarray(log_iota, dtype=np.float64).reshape(1, 1)
        if self.log_beta.shape != self.log_alpha.shape:
            raise ValueError("log_alpha/log_beta shapes disagree")

    @classmethod
    def initial(cls, rank: int, value: float = 1e-6) -> "VariationalState":
        lv = np.log(value)
        return cls(np.full((rank, 1), lv), np.full((rank, 1), lv), lv, lv, lv)

    @property
    def rank(self) -> int:
        return self.log_alpha.shape[0]

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha).ravel()

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta).ravel()

    @property
    def sigma2(self) -> float:
        return np.exp(self.log_sigma2).item()

    @property
    def rho(self) -> float:
        return np.exp(self.log_rho).item()

    @property
    def iota(self) -> float:
        return np.exp(self.log_iota).item()

    @property
    def lambda_mean(self) -> np.ndarray:
        return self.alpha / self.beta

    @property
    def tau_mean(self) -> float:
        return self.rho / self.iota

    def params(self) -> dict[str, np.ndarray]:
        return {
            "vs.log_alpha": self.log_alpha,
            "vs.log_beta": self.log_beta,
            "vs.log_sigma2": self.log_sigma2,
            "vs.log_rho": self.log_rho,
            "vs.log_iota": self.log_iota,
        }


@dataclass
class ModelConfig:
    """Shape and architecture of the decomposition model."""

    n_modes: int
    rank: int = 5
    state_dim: int = 5
    fourier_dim: int = 32
    encoder_hidden: tuple = (100,)
    dynamics_hidden: tuple = (100, 100)
    decoder_hidden: tuple = (100, 100)
    seed: int = 0

    def __post_init__(self):
        if self.n_modes < 2:
            raise ValueError("need at least 2 tensor modes")
        if min(self.rank, self.state_dim, self.fourier_dim) < 1:
            raise ValueError("rank/state_dim/fourier_dim must be >= 1")
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.dynamics_hidden = tuple(self.dynamics_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)


class OdeCpModel:
    """K mode networks plus variational state and prior hyperparameters."""

    def __init__(self, config: ModelConfig, prior: PriorHyper | None = None,
                 init_value: float = 1e-6):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.modes = [
            ModeNetwork(k, config.rank, config.state_dim, config.fourier_dim, rng,
                        encoder_hidden=config.encoder_hidden,
                        dynamics_hidden=config.dynamics_hidden,
                        decoder_hidden=config.decoder_hidden)
            for k in range(config.n_modes)
        ]
        self.vs = VariationalState.initial(config.rank, init_value)
        self.prior = prior if prior is not None else PriorHyper.default(config.rank)
        if self.prior.a0.size != config.rank:
            raise ValueError("prior rank disagrees with model rank")

    @property
    def rank(self) -> int:
        return self.config.rank

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for mode in self.modes:
            out.update(mode.params())
        out.update(self.vs.params())
        return out

    def network_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for mode in self.modes:
            out.update(mode.params())
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state dict missing parameters: {sorted(missing)}")
        for name, arr in params.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} != {arr.shape}")
            arr[...] = src


def reconstruct(g_tuple) -> float:
    """Rank-summed product of K factor vectors: sum_r prod_k g^k_r."""
    rows = [np.asarray(g, dtype=np.float64).ravel() for g in g_tuple]
    r = rows[0].size
    if any(row.size != r for row in rows):
        raise ShapeError("reconstruct: factor vectors have different lengths")
    return float(np.sum(np.prod(np.stack(rows), axis=0)))


class VsVars(NamedTuple):
    """Positive-valued variational parameters as tape nodes."""

    alpha: Var
    beta: Var
    sigma2: Var
    rho: Var
    iota: Var


def lift_variational(leaves: dict[str, Var]) -> VsVars:
    return VsVars(
        alpha=ad.exp(leaves["vs.log_alpha"]),
        beta=ad.exp(leaves["vs.log_beta"]),
        sigma2=ad.exp(leaves["vs.log_sigma2"]),
        rho=ad.exp(leaves["vs.log_rho"]),
        iota=ad.exp(leaves["vs.log_iota"]),
    )


def _product(parts: list[Var]) -> Var:
    out = parts[0]
    for p in parts[1:]:
        out = ad.mul(out, p)
    return out


def expected_loglik(y: np.ndarray, g_list: list[Var], vv: VsVars,
                    n_total: int) -> Var:
    """Posterior expectation of the Gaussian log-likelihood, closed form.

    The per-observation model-error expectation is
    (y - m)^2 + sum_r [prod_k (g_r^2 + sigma2) - prod_k g_r^2] with
    m = sum_r prod_k g_r, which is the expanded vec/Hadamard form. Batch
    sums are scaled by N/B so the full-batch value is the expectation of
    the mini-batch estimator.
    """
    tape = g_list[0].tape
    batch = y.size
    sf = n_total / batch
    ycol = tape.const(y.reshape(-1, 1))

    h = _product(g_list)
    m = ad.sum_cols(h)
    sq_err = ad.square(ad.sub(ycol, m))
    p = _product([ad.scalar_add(vv.sigma2, ad.square(g)) for g in g_list])
    corr = ad.sub(p, ad.square(h))
    e_total = ad.scale(ad.add(ad.total(sq_err), ad.total(corr)), sf)

    half_n = 0.5 * n_total
    noise_term = ad.scale(ad.sub(ad.digamma(vv.rho), ad.log(vv.iota)), half_n)
    data_term = ad.scale(ad.mul(ad.div(vv.rho, vv.iota), e_total), 0.5)
    return ad.add_const(ad.sub(noise_term, data_term), -half_n * LOG_2PI)


def trajectory_kl(g_list: list[Var], vv: VsVars, n_total: int) -> Var:
    """KL between the factor-value posterior and the shrinkage prior.

    Per (observation, mode, rank):
    0.5 * [ln(beta / (alpha * sigma2)) + (alpha/beta)(sigma2 + g^2) - 1],
    summed as written (repeated coordinates contribute repeatedly).
    """
    tape = g_list[0].tape
    batch = g_list[0].value.shape[0]
    n_modes = len(g_list)
    sf = n_total / batch

    lam = ad.div(vv.alpha, vv.beta)
    log_ratio = ad.sub(ad.log(vv.beta), ad.log(vv.alpha))
    neg_log_s2 = ad.scale(ad.log(vv.sigma2), -1.0)
    c = ad.scalar_add(neg_log_s2, ad.add_const(log_ratio, -1.0))
    c = ad.add(c, ad.scalar_mul(vv.sigma2, lam))

    const_part = ad.scale(ad.total(c), float(batch * n_modes))
    data_part = None
    for g in g_list:
        piece = ad.total(ad.matmul(ad.square(g), lam))
        data_part = piece if data_part is None else ad.add(data_part, piece)
    return ad.scale(ad.add(const_part, data_part), 0.5 * sf)


def _gamma_kl_var(shape: Var, rate: Var, prior_shape: np.ndarray,
                  prior_rate: np.ndarray, tape: Tape) -> Var:
    a0 = tape.const(np.asarray(prior_shape, dtype=np.float64).reshape(-1, 1))
    b0 = tape.const(np.asarray(prior_rate, dtype=np.float64).reshape(-1, 1))
    const = tape.const(
        np.asarray(log_gamma(a0.value) - a0.value * np.log(b0.value)).reshape(-1, 1)
    )
    t1 = ad.mul(ad.sub(shape, a0), ad.digamma(shape))
    t2 = ad.scale(ad.lgamma(shape), -1.0)
    t3 = ad.mul(a0, ad.log(rate))
    t4 = ad.mul(ad.div(shape, rate), b0)
    t5 = ad.scale(shape, -1.0)
    return ad.total(ad.add(ad.add(ad.add(t1, t2), ad.add(t3, t4)),
                           ad.add(t5, const)))


def lambda_kl(vv: VsVars, prior: PriorHyper, tape: Tape) -> Var:
    """Sum over ranks of KL(q(lambda_r) || Gamma(a0_r, b0_r))."""
    return _gamma_kl_var(vv.alpha, vv.beta, prior.a0, prior.b0, tape)


def tau_kl(vv: VsVars, prior: PriorHyper, tape: Tape) -> Var:
    """KL(q(tau) || Gamma(c0, d0))."""
    return _gamma_kl_var(vv.rho, vv.iota, np.array([prior.c0]),
                         np.array([prior.d0]), tape)


@dataclass
class ElboBuild:
    """Tape artifacts of one objective evaluation."""

    elbo: Var
    loglik: Var
    traj_kl: Var
    lam_kl: Var
    noise_kl: Var
    g_list: list[Var]
    leaves: dict[str, Var]
    grid: TimeGrid
    parts: dict = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {
            "elbo": self.elbo.value.item(),
            "loglik": self.loglik.value.item(),
            "traj_kl": self.traj_kl.value.item(),
            "lambda_kl": self.lam_kl.value.item(),
            "tau_kl": self.noise_kl.value.item(),
        }


def _forward_g(model: OdeCpModel, obs: ObservationSet, tape: Tape,
               method: str, step: float | None,
               rows: np.ndarray | None) -> tuple[list[Var], dict[str, Var], TimeGrid]:
    leaves = lift_params(model.parameters(), tape)
    grid = TimeGrid.from_times(obs.time_table, step)
    tables0 = [
        encode_initial_state(mode, obs.index_tables[k], leaves, tape)
        for k, mode in enumerate(model.modes)
    ]
    rolled = roll_trajectories(model.modes, tables0, grid, method, grid.step,
                               leaves, tape)
    if rows is None:
        plan = GatherPlan(list(obs.index_positions), obs.time_positions)
    else:
        plan = GatherPlan([pos[rows] for pos in obs.index_positions],
                          obs.time_positions[rows])
    g_list = gather_g(model.modes, rolled, grid, plan, leaves)
    return g_list, leaves, grid


def build_elbo(obs: ObservationSet, model: OdeCpModel, tape: Tape,
               method: str = "rk4", step: float | None = None,
               rows: np.ndarray | None = None) -> ElboBuild:
    """Roll trajectories, gather factors, and assemble the four terms."""
    if len(model.modes) != obs.n_modes:
        raise ShapeError(f"model has {len(model.modes)} modes, data has {obs.n_modes}")
    g_list, leaves, grid = _forward_g(model, obs, tape, method, step, rows)
    vv = lift_variational(leaves)
    y = obs.values if rows is None else obs.values[rows]

    ll = expected_loglik(y, g_list, vv, obs.n)
    tkl = trajectory_kl(g_list, vv, obs.n)
    lkl = lambda_kl(vv, model.prior, tape)
    nkl = tau_kl(vv, model.prior, tape)
    total = ad.sub(ad.sub(ad.sub(ll, tkl), lkl), nkl)
    return ElboBuild(total, ll, tkl, lkl, nkl, g_list, leaves, grid)


def build_squared_error(obs: ObservationSet, model: OdeCpModel, tape: Tape,
                        method: str = "rk4", step: float | None = None,
                        rows: np.ndarray | None = None) -> tuple[Var, ElboBuild]:
    """Plain reconstruction error sum, scaled by N/B (the shrinkage-free
    ablation objective); the variational state takes no part."""
    g_list, leaves, grid = _forward_g(model, obs, tape, method, step, rows)
    y = obs.values if rows is None else obs.values[rows]
    batch = y.size
    ycol = tape.const(y.reshape(-1, 1))
    m = ad.sum_cols(_product(g_list))
    loss = ad.scale(ad.total(ad.square(ad.sub(ycol, m))), obs.n / batch)
    build = ElboBuild(loss, loss, loss, loss, loss, g_list, leaves, grid)
    return loss, build


def elbo(obs: ObservationSet, model: OdeCpModel, method: str = "rk4",
         step: float | None = None, rows: np.ndarray | None = None) -> float:
    """Objective value at the current parameters (fresh throwaway tape)."""
    return build_elbo(obs, model, Tape(), method, step, rows).elbo.value.item()


def evaluate_factors(model: OdeCpModel, indexes: np.ndarray, times: np.ndarray,
                     method: str = "rk4", step: float | None = None) -> list[np.ndarray]:
    """Forward-only factor values g^k at arbitrary coordinates: K x (Q, R).

    Batches all queries into one trajectory roll over the union of the
    query timestamps; off-grid timestamps are made part of the grid, never
    interpolated.
    """
    indexes = np.atleast_2d(np.asarray(indexes, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64).ravel()
    if indexes.shape[0] != times.size:
        raise ShapeError("indexes/times lengths disagree")
    if indexes.shape[1] != len(model.modes):
        raise ShapeError(f"expected {len(model.modes)} index columns")

    tape = Tape()
    leaves = lift_params(model.parameters(), tape)
    uniq_times, tpos = np.unique(times, return_inverse=True)
    grid = TimeGrid.from_times(uniq_times, step)
    tables0 = []
    upos = []
    for k, mode in enumerate(model.modes):
        uniq, inv = np.unique(indexes[:, k], return_inverse=True)
        tables0.append(encode_initial_state(mode, uniq, leaves, tape))
        upos.append(inv)
    rolled = roll_trajectories(model.modes, tables0, grid, method, grid.step,
                               leaves, tape)
    plan = GatherPlan(upos, tpos)
    return [g.value for g in gather_g(model.modes, rolled, grid, plan, leaves)]
