"""Multivariate Gaussian helpers shared by every filter.

Covariances are symmetrized before any factorization and all solves go
through Cholesky factors; explicit inverses are only formed where a
caller needs the matrix itself.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidCovarianceError, UnstableDynamicsError

LOG_2PI = float(np.log(2.0 * np.pi))
PD_TOL = 1e-10
SYM_TOL = 1e-9


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def check_pd(M, tol=PD_TOL):
    """Return True iff ``M`` admits a Cholesky factorization whose pivots
    all exceed ``tol`` times the largest diagonal entry."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        return False
    scale = np.max(np.abs(np.diag(M))) if M.size else 0.0
    if scale <= 0.0:
        return False
    try:
        L = np.linalg.cholesky(symmetrize(M))
    except np.linalg.LinAlgError:
        return False
    return bool(np.min(np.diag(L)) ** 2 > tol * scale)


def check_psd(M, tol=PD_TOL):
    """Positive semi-definiteness up to ``tol`` relative slack.

    Implemented as :func:`check_pd` on ``M + tol * scale * I`` where
    ``scale`` is the largest absolute diagonal entry.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scale = max(np.max(np.abs(np.diag(M))), 1e-300)
    shifted = M + 2.0 * tol * scale * np.eye(M.shape[0])
    return check_pd(shifted, tol=tol * 1e-3)


def cholesky(M, what="covariance"):
    """Lower Cholesky factor of the symmetrized ``M``.

    Raises :class:`InvalidCovarianceError` when ``M`` is not PD.
    """
    try:
        return np.linalg.cholesky(symmetrize(M))
    except np.linalg.LinAlgError as exc:
        raise InvalidCovarianceError(f"{what} is not positive definite") from exc


def pd_inv(M, what="covariance"):
    L = cholesky(M, what)
    Linv = scipy.linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return symmetrize(Linv.T @ Linv)


def pd_solve(M, B, what="covariance"):
    L = cholesky(M, what)
    return scipy.linalg.cho_solve((L, True), B)


def gaussian_log_density(x, mean, cov):
    """Log of the multivariate normal density N(x; mean, cov).

    >>> round(float(gaussian_log_density(0.0, 0.0, 1.0)), 7)
    -0.9189385
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    L = cholesky(cov)
    r = scipy.linalg.solve_triangular(L, x - mean, lower=True)
    d = x.shape[0]
    return float(-0.5 * r @ r - np.sum(np.log(np.diag(L))) - 0.5 * d * LOG_2PI)


def gaussian_log_density_rows(X, mean, cov):
    """Vectorized :func:`gaussian_log_density` over the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = cholesky(np.atleast_2d(cov))
    R = scipy.linalg.solve_triangular(L, (X - mean).T, lower=True)
    d = X.shape[1]
    return -0.5 * np.sum(R * R, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * d * LOG_2PI


def spectral_radius(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def stationary_covariance(A, gamma, tol=1e-12, max_iter=200):
    """Solve the discrete Lyapunov equation ``S = A S A^T + gamma``.

    Uses the squaring form of the fixed-point iteration: after ``k``
    rounds ``S`` holds the first ``2**k`` terms of ``sum_j A^j gamma A^jT``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    gamma = symmetrize(np.atleast_2d(gamma))
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise UnstableDynamicsError(
            f"spectral radius of A is {rho:.6g} >= 1; no stationary covariance",
            spectral_radius=rho,
        )
    cholesky(gamma, "gamma")
    S = gamma.copy()
    Ak = A.copy()
    for _ in range(max_iter):
        delta = Ak @ S @ Ak.T
        S = symmetrize(S + delta)
        Ak = Ak @ Ak
        if np.max(np.abs(delta)) < tol:
            break
    # one plain sweep cleans up roundoff from the doubling steps
    S = symmetrize(A @ S @ A.T + gamma)
    return S


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Mean and covariance of a Gaussian filtering posterior."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.shape[0]}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(cov))):
            raise InvalidCovarianceError("belief covariance is not symmetric")
        cov = symmetrize(cov)
        if not check_pd(cov):
            raise InvalidCovarianceError("belief covariance is not positive definite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    def log_density(self, z):
        return gaussian_log_density(z, self.mean, self.cov)
