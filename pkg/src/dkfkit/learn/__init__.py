"""Regression learners that produce ``f(x)`` and ``Q(x)`` from training pairs."""
from .data import SupervisedSet, ridge_epsilon
from .dynamics import fit_state_dynamics, octant_index, sparsify_octants
from .gp import (GpModel, HyperGrid, KernelSpec, default_hyper_grid, gp_fit, gp_from_hyperparameters,
                 gp_predict, kernel_eval, log_marginal_likelihood)
from .mlp import MlpModel, loss_and_grad, mlp_fit, mlp_predict
from .nw import (ConstantCovariance, NwCovariance, NwModel, default_bandwidth_grid, fit_constant_q,
                 fit_q_residuals, loo_mse, nw_fit, nw_predict)
from .serialize import load_model, save_model

__all__ = [
    "SupervisedSet", "ridge_epsilon", "fit_state_dynamics", "octant_index", "sparsify_octants",
    "GpModel", "HyperGrid", "KernelSpec", "default_hyper_grid", "gp_fit", "gp_from_hyperparameters",
    "gp_predict", "kernel_eval", "log_marginal_likelihood", "MlpModel", "loss_and_grad", "mlp_fit",
    "mlp_predict", "ConstantCovariance", "NwCovariance", "NwModel", "default_bandwidth_grid",
    "fit_constant_q", "fit_q_residuals", "loo_mse", "nw_fit", "nw_predict", "load_model", "save_model",
]
