"""Complexity-adaptive CP decomposition of temporal tensors with continuous
indexes: latent-ODE factor trajectories, closed-form variational inference
with automatic rank shrinkage, and Student-t predictive distributions."""

__version__ = "0.1.0"

from .data import (NormInfo, ObservationSet, SplitSpec, add_noise,
                   gen_synthetic, load_csv, save_csv, split, synthetic_truth)
from .model import (ModelConfig, OdeCpModel, PriorHyper, VariationalState,
                    elbo, evaluate_factors, reconstruct)
from .prediction import PredictiveLaw, evaluate, predict, predict_interval
from .rank import RankReport, component_power, prune, reveal_rank
from .specialmath import (GammaLaw, GaussianLaw, digamma, kl_gamma,
                          kl_gaussian, log_gamma, student_t_logpdf, trigamma)
from .training import Adam, TrainConfig, TrainHistory, train, train_ablation

__all__ = [
    "Adam", "GammaLaw", "GaussianLaw", "ModelConfig", "NormInfo",
    "ObservationSet", "OdeCpModel", "PredictiveLaw", "PriorHyper",
    "RankReport", "SplitSpec", "TrainConfig", "TrainHistory",
    "VariationalState", "add_noise", "component_power", "digamma", "elbo",
    "evaluate", "evaluate_factors", "gen_synthetic", "kl_gamma", "kl_gaussian",
    "load_csv", "log_gamma", "predict", "predict_interval", "prune",
    "reconstruct", "reveal_rank", "save_csv", "split", "student_t_logpdf",
    "synthetic_truth", "train", "train_ablation", "trigamma",
]
