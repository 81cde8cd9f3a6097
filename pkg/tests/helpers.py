"""Shared oracles and fixtures-in-plain-code for the test suite.

The oracles here are deliberately independent of the library's own code
paths: finite differences for gradients, Monte-Carlo expectation estimates
for KL divergences and the expected log-likelihood, and brute-force loops
for reductions the library vectorizes.
"""

from __future__ import annotations

import numpy as np

import odecp
from odecp import autodiff as ad
from odecp.autodiff import Tape
from odecp.model import build_elbo


def finite_difference(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    fd = np.zeros_like(arr)
    flat, out = arr.ravel(), fd.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return fd


def tape_fd_grad(make_loss, arrs: list[np.ndarray], h: float = 1e-5):
    """FD gradients of a tape-built scalar loss w.r.t. plain arrays."""
    def value():
        return make_loss().value.item()
    return [finite_difference(value, a, h) for a in arrs]


def mc_kl_gaussian(p, q, n: int, rng) -> tuple[float, float]:
    x = rng.normal(p.mean, np.sqrt(p.variance), size=n)
    def logpdf(x, mu, var):
        return -0.5 * np.log(2 * np.pi * var) - 0.5 * (x - mu) ** 2 / var
    d = logpdf(x, p.mean, p.variance) - logpdf(x, q.mean, q.variance)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(n))


def gamma_logpdf(x, shape, rate):
    from scipy.special import gammaln
    return shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


def mc_kl_gamma(p, q, n: int, rng) -> tuple[float, float]:
    x = rng.gamma(p.shape, 1.0 / p.rate, size=n)
    d = gamma_logpdf(x, p.shape, p.rate) - gamma_logpdf(x, q.shape, q.rate)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(n))


def tiny_model(n_modes=2, rank=2, state_dim=3, fourier_dim=2, seed=3,
               widths=(5,)):
    cfg = odecp.ModelConfig(
        n_modes=n_modes, rank=rank, state_dim=state_dim, fourier_dim=fourier_dim,
        encoder_hidden=widths, dynamics_hidden=widths, decoder_hidden=widths,
        seed=seed)
    model = odecp.OdeCpModel(cfg)
    r = rank
    model.vs.log_alpha[:] = np.log(np.linspace(2.0, 3.0, r)).reshape(-1, 1)
    model.vs.log_beta[:] = np.log(np.linspace(1.5, 1.2, r)).reshape(-1, 1)
    model.vs.log_sigma2[:] = np.log(0.05)
    model.vs.log_rho[:] = np.log(2.0)
    model.vs.log_iota[:] = np.log(1.0)
    return model


def tiny_obs(n: int = 8, seed: int = 1, n_modes: int = 2) -> odecp.ObservationSet:
    rng = np.random.default_rng(seed)
    indexes = rng.uniform(0.05, 0.95, size=(n, n_modes))
    times = np.sort(rng.uniform(0.05, 0.95, size=n))
    values = rng.normal(0.0, 0.6, size=n)
    return odecp.ObservationSet(indexes, times, values)


def tiny_build(model, obs, method="rk4", step=None, rows=None):
    tape = Tape()
    return tape, build_elbo(obs, model, tape, method=method, step=step, rows=rows)


def mc_expected_loglik(y, g_list, vs, n_samples, rng, chunk=100_000):
    """E_q[ln p(D | U, tau)] by sampling u ~ q(U) and tau ~ q(tau)."""
    n, r = g_list[0].shape
    pieces = []
    done = 0
    while done < n_samples:
        c = min(chunk, n_samples - done)
        tau = rng.gamma(vs.rho, 1.0 / vs.iota, size=(c, 1))
        u = np.stack([rng.normal(g, np.sqrt(vs.sigma2), size=(c, n, r))
                      for g in g_list])
        rec = np.sum(np.prod(u, axis=0), axis=2)
        ll = 0.5 * np.log(tau / (2 * np.pi)) - 0.5 * tau * (y[None, :] - rec) ** 2
        pieces.append(ll.sum(axis=1))
        done += c
    s = np.concatenate(pieces)
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(n_samples))


def mc_trajectory_kl(g_list, vs, n_samples, rng, chunk=100_000):
    """E_{q(U)}[ln q(U) - ln p(U | lambda = E_q lambda)]."""
    lam = vs.lambda_mean
    s2 = vs.sigma2
    pieces = []
    done = 0
    while done < n_samples:
        c = min(chunk, n_samples - done)
        tot = np.zeros(c)
        for g in g_list:
            u = rng.normal(g, np.sqrt(s2), size=(c,) + g.shape)
            lnq = -0.5 * np.log(2 * np.pi * s2) - 0.5 * (u - g) ** 2 / s2
            lnp = 0.5 * np.log(lam / (2 * np.pi)) - 0.5 * lam * u ** 2
            tot += (lnq - lnp).sum(axis=(1, 2))
        pieces.append(tot)
        done += c
    s = np.concatenate(pieces)
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(n_samples))


def mc_gamma_kl_sum(shapes, rates, prior_shapes, prior_rates, n_samples, rng):
    shapes = np.atleast_1d(shapes)
    rates = np.atleast_1d(rates)
    prior_shapes = np.atleast_1d(prior_shapes)
    prior_rates = np.atleast_1d(prior_rates)
    x = rng.gamma(shapes, 1.0 / rates, size=(n_samples, shapes.size))
    d = (gamma_logpdf(x, shapes, rates)
         - gamma_logpdf(x, prior_shapes, prior_rates)).sum(axis=1)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(n_samples))


def mc_predictive_samples(g_list, vs, n_samples, rng):
    """Draw y from the exact predictive: u ~ q(U), tau ~ q(tau), y ~ N(. , 1/tau)."""
    u = np.stack([rng.normal(g.ravel(), np.sqrt(vs.sigma2), size=(n_samples, g.size))
                  for g in g_list])
    rec = np.sum(np.prod(u, axis=0), axis=1)
    tau = rng.gamma(vs.rho, 1.0 / vs.iota, size=n_samples)
    return rec + rng.normal(0.0, 1.0, size=n_samples) / np.sqrt(tau)


def model_value_fn(obs, model, method="rk4", step=None):
    def value():
        return odecp.elbo(obs, model, method=method, step=step)
    return value
