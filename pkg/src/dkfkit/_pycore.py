"""Reference implementations of the hot kernels.

These are the pure-Python/numpy twins of ``_core.pyx``; the compiled
module must agree with them to roundoff.
"""
import numpy as np

from .errors import NumericalFailureError

RBF = 0
MK = 1


def _chol_inv(M, t, what):
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NumericalFailureError(f"{what} not positive definite at step {t}") from None
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def info_scan(J, h, A, gamma, mu0, sigma0):
    """Information-form Gaussian filter over ``T`` steps.

    For each step ``t``::

        M     = A Sigma A^T + gamma
        Sigma = (J[t] + M^-1)^-1
        mu    = Sigma (h[t] + M^-1 A mu)

    Returns ``(means, covs)`` with shapes ``(T, d)`` and ``(T, d, d)``.
    """
    J = np.asarray(J, dtype=float)
    h = np.asarray(h, dtype=float)
    T, d = h.shape
    means = np.empty((T, d))
    covs = np.empty((T, d, d))
    mu = np.array(mu0, dtype=float)
    sigma = np.array(sigma0, dtype=float)
    for t in range(T):
        M = A @ sigma @ A.T + gamma
        M = 0.5 * (M + M.T)
        Minv = _chol_inv(M, t, "predicted covariance")
        P = J[t] + Minv
        P = 0.5 * (P + P.T)
        sigma = _chol_inv(P, t, "posterior precision")
        sigma = 0.5 * (sigma + sigma.T)
        mu = sigma @ (h[t] + Minv @ (A @ mu))
        means[t] = mu
        covs[t] = sigma
    return means, covs


def systematic_resample(weights, u):
    """Ancestor indices from systematic resampling with offset ``u`` in [0, 1)."""
    w = np.asarray(weights, dtype=float)
    N = w.shape[0]
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    positions = (u + np.arange(N)) / N
    idx = np.searchsorted(cdf, positions, side="right")
    return np.minimum(idx, N - 1).astype(np.int64)


def kernel_matrix(X, Y, family, sigma_f2, sigma_l2):
    """Gram matrix between rows of ``X`` and ``Y`` for the RBF or MK kernel."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if family == RBF:
        sq = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(Y * Y, axis=1)[None, :]
            - 2.0 * X @ Y.T
        )
        np.maximum(sq, 0.0, out=sq)
        return sigma_f2 * np.exp(-sq / (2.0 * sigma_l2))
    m = X.shape[1]
    out = np.zeros((X.shape[0], Y.shape[0]))
    for j in range(m):
        diff = X[:, j][:, None] - Y[:, j][None, :]
        out += np.exp(-(diff * diff) / (2.0 * sigma_l2))
    return (sigma_f2 / m) * out
