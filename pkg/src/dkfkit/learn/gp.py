"""Gaussian process regression with RBF or multiple-kernel covariances.

Hyperparameters are chosen per output dimension by exhaustive search
of the log marginal likelihood over a log-spaced grid.
"""
from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.linalg

from .. import _backend
from ..errors import ConfigError, FitError, InsufficientDataError
from ..gaussian import LOG_2PI
from .nw import median_pairwise_distance

FAMILIES = {"rbf": _backend.RBF, "mk": _backend.MK}
_SINGULAR_RCOND = 1e-13


@dataclass(frozen=True)
class KernelSpec:
    family: str
    sigma_f2: float
    sigma_l2: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if not (self.sigma_f2 > 0 and self.sigma_l2 > 0):
            raise ConfigError("kernel hyperparameters must be positive")

    def matrix(self, X, Y):
        return _backend.kernel_matrix(X, Y, FAMILIES[self.family], float(self.sigma_f2), float(self.sigma_l2))


def kernel_eval(spec, x, y):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("kernel arguments must have equal dimension")
    return float(spec.matrix(x[None], y[None])[0, 0])


@dataclass(frozen=True)
class HyperGrid:
    sigma_f2: tuple
    sigma_l2: tuple
    sigma_n2: tuple

    def __post_init__(self):
        for name in ("sigma_f2", "sigma_l2", "sigma_n2"):
            vals = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if not vals:
                raise ConfigError(f"hyperparameter grid {name} is empty")
            object.__setattr__(self, name, vals)

    def triples(self):
        return list(product(self.sigma_f2, self.sigma_l2, self.sigma_n2))


def default_hyper_grid(data, family, n_f=7, n_l=7, n_n=5):
    """Log-spaced grid scaled to the data (7 x 7 x 5 by default)."""
    zvar = float(np.mean(np.var(data.zs, axis=0))) or 1.0
    if family == "rbf":
        l0 = median_pairwise_distance(data.xs) ** 2
    else:
        l0 = float(np.median(np.var(data.xs, axis=0))) * 2.0 or 1.0
    return HyperGrid(
        zvar * np.logspace(-1, 1, n_f),
        l0 * np.logspace(-2, 2, n_l),
        zvar * np.logspace(-4, 0, n_n),
    )


@dataclass(frozen=True, eq=False)
class GpModel:
    """Fitted GP; one kernel and noise level per output dimension."""

    kernels: tuple
    noises: tuple
    train_x: np.ndarray
    alpha: np.ndarray

    @property
    def kernel(self):
        return self.kernels[0]

    @property
    def noise(self):
        return self.noises[0]

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], self.alpha.shape[1]))
        cache = {}
        for j, k in enumerate(self.kernels):
            if k not in cache:
                cache[k] = k.matrix(X, self.train_x)
            out[:, j] = cache[k] @ self.alpha[:, j]
        return out


def gp_predict(model, x):
    x = np.asarray(x, dtype=float)
    pred = model.predict(x)
    return pred[0] if x.ndim == 1 else pred


def log_marginal_likelihood(K, y, noise):
    """Log marginal likelihood of targets ``y`` under ``N(0, K + noise I)``."""
    C = K + noise * np.eye(K.shape[0])
    L = np.linalg.cholesky(C)
    a = scipy.linalg.solve_triangular(L, y, lower=True)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * LOG_2PI)


def _grid_scores(K1, Y, grid):
    """Scores (m_triples, d) of every grid triple for every output column.

    ``K1`` is the kernel at unit signal variance, so one eigendecomposition
    serves all signal and noise levels."""
    lam, U = np.linalg.eigh(K1)
    lam = np.maximum(lam, 0.0)
    Yt = U.T @ Y
    m = K1.shape[0]
    rows = []
    for sf2 in grid.sigma_f2:
        for sn2 in grid.sigma_n2:
            ev = sf2 * lam + sn2
            if ev.min() <= _SINGULAR_RCOND * ev.max():
                rows.append(np.full(Y.shape[1], -np.inf))
                continue
            quad = np.sum(Yt ** 2 / ev[:, None], axis=0)
            rows.append(-0.5 * quad - 0.5 * np.sum(np.log(ev)) - 0.5 * m * LOG_2PI)
    return np.array(rows).reshape(len(grid.sigma_f2), len(grid.sigma_n2), Y.shape[1])


def gp_fit(data, family="rbf", hyper_grid=None):
    """Per-dimension grid search on the log marginal likelihood.

    Grid points where ``K + sigma_n2 I`` is numerically singular are
    skipped. Ties resolve to the first triple in (sigma_f2, sigma_l2,
    sigma_n2) lexicographic grid order.
    """
    if data.m < 2:
        raise InsufficientDataError("GP fitting needs at least two pairs")
    grid = default_hyper_grid(data, family) if hyper_grid is None else hyper_grid
    if family not in FAMILIES:
        raise ConfigError(f"unknown kernel family {family!r}")
    d = data.d
    best = [(-np.inf, None) for _ in range(d)]
    for il, sl2 in enumerate(grid.sigma_l2):
        K1 = KernelSpec(family, 1.0, sl2).matrix(data.xs, data.xs)
        scores = _grid_scores(K1, data.zs, grid)
        for j in range(d):
            for i_f, i_n in product(range(len(grid.sigma_f2)), range(len(grid.sigma_n2))):
                s = scores[i_f, i_n, j]
                key = (i_f, il, i_n)
                if s > best[j][0] or (s == best[j][0] and best[j][1] is not None and key < best[j][1]):
                    best[j] = (s, key)
    if any(b[1] is None for b in best):
        raise FitError("every hyperparameter grid point gave a singular kernel matrix")
    kernels, noises = [], []
    alpha = np.empty((data.m, d))
    for j, (_, (i_f, il, i_n)) in enumerate(best):
        k = KernelSpec(family, grid.sigma_f2[i_f], grid.sigma_l2[il])
        sn2 = grid.sigma_n2[i_n]
        C = k.matrix(data.xs, data.xs) + sn2 * np.eye(data.m)
        try:
            alpha[:, j] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(C, lower=True), data.zs[:, j])
        except np.linalg.LinAlgError as exc:
            raise FitError(f"kernel matrix not positive definite for output {j}") from exc
        kernels.append(k)
        noises.append(sn2)
    return GpModel(tuple(kernels), tuple(noises), data.xs.copy(), alpha)


def gp_from_hyperparameters(data, kernel, noise):
    """GP with fixed hyperparameters shared by all outputs."""
    C = kernel.matrix(data.xs, data.xs) + noise * np.eye(data.m)
    alpha = scipy.linalg.cho_solve(scipy.linalg.cho_factor(C, lower=True), data.zs)
    return GpModel((kernel,) * data.d, (float(noise),) * data.d, data.xs.copy(), alpha)
