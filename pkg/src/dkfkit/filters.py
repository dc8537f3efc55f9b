"""Classical Bayesian filter steps.

Each ``*_step`` maps a posterior at ``t-1`` and an observation at ``t``
to the posterior at ``t``. State dynamics objects (``LinearStateSpec``,
``SineDynamics``) supply ``mean``, ``jacobian``, ``gamma`` and
``sample``; the EKF/UKF use them for prediction.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _backend
from .errors import (
    DivergenceError,
    InvalidCovarianceError,
    NumericalFailureError,
    WeightCollapseError,
)
from .gaussian import GaussianBelief, cholesky, symmetrize
from .models import LinearStateSpec


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 0.001
    beta: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


# ---------------------------------------------------------------------------
# Gaussian filters
# ---------------------------------------------------------------------------


def _belief(mean, cov):
    try:
        return GaussianBelief(mean, symmetrize(cov))
    except InvalidCovarianceError as exc:
        raise NumericalFailureError(f"posterior covariance lost definiteness: {exc}") from exc


def kf_predict(belief, state):
    A = state.A
    return A @ belief.mean, symmetrize(A @ belief.cov @ A.T + state.gamma)


def ekf_predict(belief, dynamics):
    """Linearized prediction through a (possibly nonlinear) state map."""
    if isinstance(dynamics, LinearStateSpec):
        return kf_predict(belief, dynamics)
    F = dynamics.jacobian(belief.mean)
    return dynamics.mean(belief.mean), symmetrize(F @ belief.cov @ F.T + dynamics.gamma)


def _gain_update(nu_hat, phi_hat, H, lam, innovation):
    """Kalman gain update ``K = Phi H^T (H Phi H^T + lam)^-1``."""
    S_inn = symmetrize(H @ phi_hat @ H.T + lam)
    try:
        c = scipy.linalg.cho_factor(S_inn, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("innovation covariance is singular") from exc
    K = scipy.linalg.cho_solve(c, H @ phi_hat).T
    phi = (np.eye(phi_hat.shape[0]) - K @ H) @ phi_hat
    return nu_hat + K @ innovation, symmetrize(phi)


def kf_step(belief, state, obs, x):
    """One Kalman filter recursion for ``X ~ N(H Z + b, lambda)``."""
    nu_hat, phi_hat = kf_predict(belief, state)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    innov = x - obs.b - obs.H @ nu_hat
    return _belief(*_gain_update(nu_hat, phi_hat, obs.H, obs.lam, innov))


def ekf_step(belief, state, h, jac_h, lam, x):
    """Extended Kalman filter: linearize ``h`` at the predicted mean."""
    nu_hat, phi_hat = ekf_predict(belief, state)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    H = np.atleast_2d(jac_h(nu_hat))
    innov = x - h(nu_hat)
    return _belief(*_gain_update(nu_hat, phi_hat, H, np.atleast_2d(lam), innov))


def iekf_step(belief, state, h, jac_h, lam, x, iters=10, tol=1e-10):
    """Iterated EKF: relinearize ``h`` at the running update (Gauss-Newton
    on the one-step posterior). ``iters=1`` reproduces :func:`ekf_step`.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    nu_hat, phi_hat = ekf_predict(belief, state)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lam = np.atleast_2d(lam)
    nu_i = nu_hat
    phi_i = phi_hat
    for _ in range(iters):
        H = np.atleast_2d(jac_h(nu_i))
        innov = x - h(nu_i) - H @ (nu_hat - nu_i)
        nu_next, phi_next = _gain_update(nu_hat, phi_hat, H, lam, innov)
        if not np.all(np.isfinite(nu_next)) or np.linalg.norm(nu_next) > 1e8:
            raise DivergenceError("IEKF iterate diverged", last_stable=_belief(nu_i, phi_i))
        step = np.linalg.norm(nu_next - nu_i)
        nu_i, phi_i = nu_next, phi_next
        if step < tol:
            break
    return _belief(nu_i, phi_i)


def ukf_weights(d, cfg):
    a2 = cfg.alpha ** 2
    wm = np.full(2 * d + 1, 1.0 / (2.0 * a2 * d))
    wc = wm.copy()
    wm[0] = 1.0 - 1.0 / a2
    wc[0] = 2.0 - 1.0 / a2 - a2 + cfg.beta
    return wm, wc


def sigma_points(mean, cov, cfg):
    """``2d+1`` sigma points: the mean and ``mean +/- row_i(U)`` where
    ``U^T U = alpha^2 d cov``."""
    d = mean.shape[0]
    try:
        U = np.linalg.cholesky(symmetrize(cfg.alpha ** 2 * d * cov)).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("sigma-point covariance is not positive definite") from exc
    return np.vstack([mean[None], mean[None] + U, mean[None] - U])


def unscented_transform(fn, mean, cov, cfg):
    pts = sigma_points(mean, cov, cfg)
    wm, wc = ukf_weights(mean.shape[0], cfg)
    Y = np.atleast_2d(np.array([np.atleast_1d(fn(p)) for p in pts]))
    mu = wm @ Y
    dY = Y - mu
    dZ = pts - mean
    P_yy = (wc[:, None] * dY).T @ dY
    P_zy = (wc[:, None] * dZ).T @ dY
    return mu, symmetrize(P_yy), P_zy


def ukf_predict(belief, dynamics, cfg):
    if isinstance(dynamics, LinearStateSpec):
        return kf_predict(belief, dynamics)
    mu, P, _ = unscented_transform(dynamics.mean, belief.mean, belief.cov, cfg)
    return mu, symmetrize(P + dynamics.gamma)


def ukf_step(belief, state, h, lam, cfg, x):
    """Unscented Kalman filter with the Gaussian assumed-density update."""
    nu_hat, phi_hat = ukf_predict(belief, state, cfg)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mu_x, P_xx, P_zx = unscented_transform(h, nu_hat, phi_hat, cfg)
    P_xx = symmetrize(P_xx + np.atleast_2d(lam))
    try:
        c = scipy.linalg.cho_factor(P_xx, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("P_xx is not positive definite") from exc
    K = scipy.linalg.cho_solve(c, P_zx.T).T
    phi = phi_hat - K @ P_xx @ K.T
    return _belief(nu_hat + K @ (x - mu_x), phi)


# ---------------------------------------------------------------------------
# particle filter
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.particles, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (P.shape[0],) or P.shape[0] < 1:
            raise ValueError("need one weight per particle and N >= 1")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "particles", P)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_prior(cls, state, N, rng):
        return cls(state.sample_initial(N, rng), np.full(N, 1.0 / N))

    @property
    def mean(self):
        return self.weights @ self.particles

    @property
    def cov(self):
        c = self.particles - self.mean
        return symmetrize((self.weights[:, None] * c).T @ c)


def systematic_resample(weights, rng):
    """Ancestor indices by systematic resampling (one uniform offset)."""
    return _backend.systematic_resample(np.asarray(weights, dtype=float), float(rng.random()))


def pf_step(ens, state, obs_loglik, x, rng):
    """One SIR recursion: resample, propagate through the dynamics,
    reweight by ``exp(obs_loglik(x, particles))``."""
    idx = systematic_resample(ens.weights, rng)
    particles = state.sample(ens.particles[idx], rng)
    logw = np.asarray(obs_loglik(x, particles), dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise WeightCollapseError("all particle log-likelihoods are -inf")
    w = np.exp(logw - top)
    w /= w.sum()
    return ParticleEnsemble(particles, w)


def particle_filter(X, state, obs_loglik, N, rng):
    """Run :func:`pf_step` over ``X``; returns posterior means (T, d)."""
    ens = ParticleEnsemble.from_prior(state, N, rng)
    means = np.empty((X.shape[0], state.dim))
    for t, x in enumerate(X):
        ens = pf_step(ens, state, obs_loglik, x, rng)
        means[t] = ens.mean
    return means


# ---------------------------------------------------------------------------
# 1-D grid oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridPosterior:
    grid: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.grid, dtype=float))
        m = np.atleast_1d(np.asarray(self.mass, dtype=float))
        if g.shape != m.shape:
            raise ValueError("grid and mass must have equal length")
        if g.shape[0] > 1 and np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("mass must sum to one")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "mass", m)

    @property
    def spacing(self):
        if self.grid.shape[0] == 1:
            return np.ones(1)
        return np.gradient(self.grid)

    @classmethod
    def from_gaussian(cls, grid, mean, var):
        grid = np.asarray(grid, dtype=float)
        logp = -0.5 * (grid - mean) ** 2 / var
        p = np.exp(logp - logp.max())
        return cls(grid, p / p.sum())

    @property
    def mean(self):
        return float(self.mass @ self.grid)

    @property
    def var(self):
        return float(self.mass @ (self.grid - self.mean) ** 2)


class GridTransition:
    """Transition densities ``tau[k, j] = p(g_j | g_k)`` on a 1-D grid,
    evaluated once and reused every step."""

    def __init__(self, grid, state):
        grid = np.asarray(grid, dtype=float)
        self.grid = grid
        self.kernel = np.exp(state.transition_logpdf(grid, grid))

    def predict(self, mass, spacing):
        return (mass @ self.kernel) * spacing


def grid_step(post, transition, obs_loglik, x):
    """Chapman-Kolmogorov recursion on a fixed 1-D grid."""
    pred = transition.predict(post.mass, post.spacing)
    logl = np.asarray(obs_loglik(x, post.grid[:, None]), dtype=float)
    with np.errstate(divide="ignore"):
        logm = logl + np.log(pred)
    top = np.max(logm)
    if not np.isfinite(top):
        raise NumericalFailureError("grid posterior mass underflowed; widen or refine the grid")
    m = np.exp(logm - top)
    total = m.sum()
    if total <= 0 or not np.isfinite(total):
        raise NumericalFailureError("grid posterior mass underflowed; widen or refine the grid")
    return GridPosterior(post.grid, m / total)


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def finite_difference_jacobian(fn, z, rel_step=1e-5):
    """Central differences with step ``rel_step * (1 + |z_j|)``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    cols = []
    for j in range(z.shape[0]):
        h = rel_step * (1.0 + abs(z[j]))
        e = np.zeros_like(z)
        e[j] = h
        cols.append((np.atleast_1d(fn(z + e)) - np.atleast_1d(fn(z - e))) / (2 * h))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# whole-trajectory drivers
# ---------------------------------------------------------------------------


def kalman_filter(X, state, obs, prior=None):
    """Kalman filter over ``X`` via the compiled information-form scan.

    Starts from ``N(0, S)`` at ``t = 0``; the result matches repeated
    :func:`kf_step` to roundoff.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Lc = cholesky(obs.lam)
    W = scipy.linalg.solve_triangular(Lc, obs.H, lower=True)
    J = W.T @ W
    hvec = scipy.linalg.cho_solve((Lc, True), (X - obs.b).T).T @ obs.H
    T = X.shape[0]
    mu0 = np.zeros(state.dim) if prior is None else prior.mean
    sig0 = state.S if prior is None else prior.cov
    return _backend.info_scan(
        np.broadcast_to(J, (T,) + J.shape).copy(), hvec, state.A, state.gamma, mu0, sig0
    )


def gaussian_filter_loop(X, step, prior):
    """Fold a belief-to-belief ``step(belief, x)`` over ``X``."""
    b = prior
    means = np.empty((X.shape[0], prior.dim))
    covs = np.empty((X.shape[0], prior.dim, prior.dim))
    for t, x in enumerate(X):
        b = step(b, x)
        means[t] = b.mean
        covs[t] = b.cov
    return means, covs
