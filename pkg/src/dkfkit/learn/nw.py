"""Nadaraya-Watson regression and kernel-weighted residual covariances."""
from dataclasses import dataclass
import numpy as np
from scipy.spatial.distance import cdist, pdist

from ..errors import ConfigError, InsufficientDataError
from ..gaussian import symmetrize
from .data import SupervisedSet, ridge_epsilon

_CHUNK = 1024


def median_pairwise_distance(xs, max_rows=2000):
    xs = np.atleast_2d(xs)[:max_rows]
    if xs.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(xs)))
    return med if med > 0 else 1.0


def default_bandwidth_grid(xs, n_points=20):
    """Log-spaced bandwidths from 1e-2 to 1e2 times the median pairwise distance."""
    return median_pairwise_distance(xs) * np.logspace(-2, 2, n_points)


@dataclass(frozen=True, eq=False)
class NwModel:
    bandwidth: object
    xs: np.ndarray
    zs: np.ndarray

    def __post_init__(self):
        bw = np.asarray(self.bandwidth, dtype=float)
        if np.any(bw <= 0) or not np.all(np.isfinite(bw)):
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "bandwidth", float(bw) if bw.ndim == 0 else bw)

    def log_kernel(self, X):
        h = np.asarray(self.bandwidth)
        return -0.5 * cdist(np.atleast_2d(X) / h, self.xs / h, "sqeuclidean")

    def predict(self, X, return_flag=False):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], self.zs.shape[1]))
        flags = np.zeros(X.shape[0], dtype=bool)
        for s in range(0, X.shape[0], _CHUNK):
            out[s:s + _CHUNK], flags[s:s + _CHUNK] = _nw_apply(self.log_kernel(X[s:s + _CHUNK]), self.zs)
        if np.any(flags):
            # every weight underflowed: fall back to the nearest training input
            near = np.argmin(cdist(X[flags], self.xs, "sqeuclidean"), axis=1)
            out[flags] = self.zs[near]
        return (out, flags) if return_flag else out


def _nw_apply(logk, zs):
    """Normalized kernel average; rows whose weights all underflow are
    flagged and left for the caller to fill."""
    mx = np.max(logk, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        w = np.exp(logk - mx)
    tot = w.sum(axis=1)
    bad = ~(np.isfinite(tot) & (tot > 0))
    w[bad] = 0.0
    tot[bad] = 1.0
    return (w @ zs) / tot[:, None], bad


def loo_mse(xs, zs, bandwidth):
    """Exact leave-one-out mean squared error of the NW predictor."""
    h = np.asarray(bandwidth, dtype=float)
    xs_h = xs / h
    m = xs.shape[0]
    sse = 0.0
    for s in range(0, m, _CHUNK):
        logk = -0.5 * cdist(xs_h[s:s + _CHUNK], xs_h, "sqeuclidean")
        rows = np.arange(logk.shape[0])
        logk[rows, s + rows] = -np.inf
        pred, bad = _nw_apply(logk, zs)
        if np.any(bad):
            d2 = cdist(xs[s:s + _CHUNK][bad], xs, "sqeuclidean")
            d2[np.arange(d2.shape[0]), s + rows[bad]] = np.inf
            pred[bad] = zs[np.argmin(d2, axis=1)]
        sse += float(np.sum((pred - zs[s:s + _CHUNK]) ** 2))
    return sse / m


def nw_fit(data, bandwidth_grid=None):
    """Choose the bandwidth minimizing leave-one-out MSE.

    Ties go to the larger bandwidth.
    """
    if data.m < 2:
        raise InsufficientDataError("leave-one-out selection needs at least two pairs")
    grid = default_bandwidth_grid(data.xs) if bandwidth_grid is None else list(bandwidth_grid)
    if len(grid) == 0:
        raise ConfigError("bandwidth grid is empty")
    if len(grid) == 1:
        return NwModel(grid[0], data.xs, data.zs)
    scores = [(loo_mse(data.xs, data.zs, h), -float(np.max(h)), i) for i, h in enumerate(grid)]
    best = min(scores)
    return NwModel(grid[best[2]], data.xs, data.zs)


def nw_predict(model, x, return_flag=False):
    x = np.asarray(x, dtype=float)
    pred, flag = model.predict(x, return_flag=True)
    if x.ndim == 1:
        pred, flag = pred[0], bool(flag[0])
    return (pred, flag) if return_flag else pred


@dataclass(frozen=True, eq=False)
class NwCovariance:
    """``x -> sum_i w_i(x) R_i R_i^T + eps I`` with NW weights.

    With ``form="a6"`` the estimate is instead
    ``sigma_z + sum_i w_i(x) Z_i Z_i^T - f(x) f(x)^T`` projected to be PD.
    """

    nw: NwModel
    ridge: float
    form: str = "residual"
    f_hat: object = None
    sigma_z: np.ndarray = None

    @property
    def d(self):
        return int(round(np.sqrt(self.nw.zs.shape[1])))

    def __call__(self, X):
        X = np.atleast_2d(X)
        d = self.d
        Q = symmetrize(self.nw.predict(X).reshape(-1, d, d))
        if self.form == "a6":
            F = np.atleast_2d(self.f_hat(X))
            Q = Q + self.sigma_z - np.einsum("ti,tj->tij", F, F)
            w, V = np.linalg.eigh(symmetrize(Q))
            w = np.maximum(w, 0.0)
            Q = np.einsum("tij,tj,tkj->tik", V, w, V)
        return symmetrize(Q + self.ridge * np.eye(d))


@dataclass(frozen=True, eq=False)
class ConstantCovariance:
    Q: np.ndarray

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.broadcast_to(self.Q, (X.shape[0],) + self.Q.shape)


def _as_batch(f_hat):
    def fb(X):
        return np.atleast_2d(np.asarray(f_hat(np.atleast_2d(X)), dtype=float))
    return fb


def fit_q_residuals(heldout, f_hat, bandwidth_grid=None, ridge=None, form="residual", sigma_z=None):
    """Kernel-regress residual outer products on held-out pairs.

    ``f_hat`` maps an (m, n) batch to (m, d) predictions; ``heldout``
    must not overlap the pairs used to fit it.
    """
    d = heldout.d
    if heldout.m < d + 1:
        raise InsufficientDataError(f"need at least {d + 1} held-out pairs, got {heldout.m}")
    fb = _as_batch(f_hat)
    eps = ridge_epsilon(heldout.zs) if ridge is None else float(ridge)
    if form == "residual":
        R = heldout.zs - fb(heldout.xs)
        targets = np.einsum("ti,tj->tij", R, R).reshape(heldout.m, d * d)
        sz = None
    elif form == "a6":
        targets = np.einsum("ti,tj->tij", heldout.zs, heldout.zs).reshape(heldout.m, d * d)
        sz = np.zeros((d, d)) if sigma_z is None else np.atleast_2d(sigma_z)
    else:
        raise ConfigError(f"unknown covariance form {form!r}")
    nw = nw_fit(SupervisedSet(heldout.xs, targets), bandwidth_grid)
    return NwCovariance(nw, eps, form, fb if form == "a6" else None, sz)


def fit_constant_q(heldout, f_hat, ridge=None):
    """Mean residual outer product on held-out pairs plus a ridge."""
    fb = _as_batch(f_hat)
    R = heldout.zs - fb(heldout.xs)
    eps = ridge_epsilon(heldout.zs) if ridge is None else float(ridge)
    return ConstantCovariance(symmetrize(R.T @ R / heldout.m + eps * np.eye(heldout.d)))


