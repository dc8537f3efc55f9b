"""The Discriminative Kalman Filter.

The filter combines linear-Gaussian state dynamics with a Gaussian
approximation ``p(z_t | x_t) ~ N(f(x_t), Q(x_t))``. The exact update is

    M_{t-1} = A Sigma_{t-1} A^T + Gamma
    Sigma_t = (Q(x_t)^-1 + M_{t-1}^-1 - S^-1)^-1
    mu_t    = Sigma_t (Q(x_t)^-1 f(x_t) + M_{t-1}^-1 A mu_{t-1})

and the robust update drops the ``S^-1`` term. Whenever
``Q(x_t)^-1 - S^-1`` is not positive semidefinite the exact filter
takes a robust update for that step only and reports it.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _backend
from .errors import InvalidDiscriminativeModelError, NumericalFailureError
from .filters import UkfConfig, ekf_predict, ukf_predict
from .gaussian import GaussianBelief, pd_inv, symmetrize

VARIANTS = ("exact", "robust", "hybrid-ekf", "hybrid-ukf")


@dataclass(frozen=True)
class DiscriminativeModel:
    """Maps ``x -> f(x)`` and ``x -> Q(x)``.

    ``batch`` optionally evaluates both over the rows of an observation
    matrix at once, returning ``(F, Qs)`` of shapes (T, d) and (T, d, d).
    """

    f: Callable
    q: Callable
    batch: Optional[Callable] = None

    def evaluate(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.batch is not None:
            F, Qs = self.batch(X)
        else:
            F = np.array([np.atleast_1d(self.f(x)) for x in X])
            Qs = np.array([np.atleast_2d(self.q(x)) for x in X])
        return np.asarray(F, dtype=float), symmetrize(np.asarray(Qs, dtype=float))

    @classmethod
    def from_batch(cls, batch):
        return cls(lambda x: batch(np.atleast_2d(x))[0][0], lambda x: batch(np.atleast_2d(x))[1][0], batch)

    @classmethod
    def constant_q(cls, f, Q, f_batch=None):
        """Learned mean with a fixed covariance."""
        Q = symmetrize(np.atleast_2d(Q))

        def batch(X):
            F = f_batch(X) if f_batch is not None else np.array([np.atleast_1d(f(x)) for x in X])
            return F, np.broadcast_to(Q, (X.shape[0],) + Q.shape)

        return cls(f, lambda x: Q, batch)


@dataclass(frozen=True)
class DkfStepReport:
    belief: GaussianBelief
    used_robust_fallback: bool


def _qinv(Q):
    try:
        return pd_inv(Q, "Q(x)")
    except Exception as exc:
        raise InvalidDiscriminativeModelError(f"Q(x) is not positive definite: {exc}") from exc


def _update(M, Amu, f, Qinv, Sinv):
    Minv = pd_inv(M, "predicted covariance")
    P = Qinv + Minv if Sinv is None else Qinv + Minv - Sinv
    try:
        sigma = pd_inv(P, "posterior precision")
    except Exception as exc:
        raise NumericalFailureError(str(exc)) from exc
    mu = sigma @ (Qinv @ f + Minv @ Amu)
    return GaussianBelief(mu, sigma)


def needs_fallback(Qinv, Sinv):
    """True when ``Q^-1 - S^-1`` is not positive semidefinite, up to a
    slack of ``1e-10`` relative to the largest diagonal entry of ``Q^-1``."""
    return bool(_batch_fallback(np.asarray(Qinv)[None], np.asarray(Sinv))[0])


def _eval(dm, x):
    f = np.atleast_1d(np.asarray(dm.f(x), dtype=float))
    Q = symmetrize(np.atleast_2d(np.asarray(dm.q(x), dtype=float)))
    return f, Q


def dkf_step(belief, state, dm, x):
    """One exact DKF update with the per-step robust fallback."""
    f, Q = _eval(dm, x)
    Qinv = _qinv(Q)
    A = state.A
    M = symmetrize(A @ belief.cov @ A.T + state.gamma)
    Sinv = pd_inv(state.S, "S")
    fallback = needs_fallback(Qinv, Sinv)
    b = _update(M, A @ belief.mean, f, Qinv, None if fallback else Sinv)
    return DkfStepReport(b, fallback)


def robust_dkf_step(belief, state, dm, x, t):
    """Robust DKF update; at ``t == 1`` (or with no belief) returns ``N(f(x), Q(x))``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    f, Q = _eval(dm, x)
    if t == 1 or belief is None:
        _qinv(Q)
        return GaussianBelief(f, Q)
    Qinv = _qinv(Q)
    A = state.A
    M = symmetrize(A @ belief.cov @ A.T + state.gamma)
    return _update(M, A @ belief.mean, f, Qinv, None)


def hybrid_step(belief, predict_kind, dynamics, dm, S_approx, x, cfg=UkfConfig()):
    """Nonlinear-dynamics prediction (EKF or UKF) followed by the
    discriminative measurement update with ``M := predicted covariance``
    and ``S := S_approx``."""
    if predict_kind == "ekf":
        nu_hat, phi_hat = ekf_predict(belief, dynamics)
    elif predict_kind == "ukf":
        nu_hat, phi_hat = ukf_predict(belief, dynamics, cfg)
    else:
        raise ValueError(f"predict_kind must be 'ekf' or 'ukf', not {predict_kind!r}")
    f, Q = _eval(dm, x)
    Qinv = _qinv(Q)
    Sinv = pd_inv(S_approx, "S_approx")
    fallback = needs_fallback(Qinv, Sinv)
    Minv = pd_inv(phi_hat, "predicted covariance")
    P = Qinv + Minv if fallback else Qinv + Minv - Sinv
    try:
        sigma = pd_inv(P, "posterior precision")
    except Exception as exc:
        raise NumericalFailureError(str(exc)) from exc
    mu = sigma @ (Qinv @ f + Minv @ nu_hat)
    return DkfStepReport(GaussianBelief(mu, sigma), fallback)


@dataclass(frozen=True, eq=False)
class FilterResult:
    means: np.ndarray
    covs: np.ndarray
    fallback: np.ndarray

    @property
    def fallback_count(self):
        return int(np.sum(self.fallback))

    def beliefs(self):
        return [GaussianBelief(m, c) for m, c in zip(self.means, self.covs)]


def _batch_qinv(Qs):
    try:
        L = np.linalg.cholesky(Qs)
    except np.linalg.LinAlgError as exc:
        raise InvalidDiscriminativeModelError("Q(x) is not positive definite") from exc
    Linv = np.linalg.inv(L)
    return symmetrize(np.swapaxes(Linv, -1, -2) @ Linv)


def _batch_fallback(Qinvs, Sinv, tol=1e-10):
    D = Qinvs - Sinv
    scale = np.max(np.abs(np.diagonal(Qinvs, axis1=1, axis2=2)), axis=1)
    ev_min = np.linalg.eigvalsh(symmetrize(D))[:, 0]
    return ev_min < -tol * scale


def dkf_filter(X, state, dm, variant="exact", dynamics=None, S_approx=None, cfg=UkfConfig(), init="prior"):
    """Run the chosen DKF variant over the observation rows ``X``.

    ``exact`` starts from ``(0, S)``; with ``init="data"`` it instead sets
    the first belief to ``(f(x_1), Q(x_1))`` and applies exact updates from
    the second step on. ``robust`` always starts from ``(f(x_1), Q(x_1))``.
    Hybrid variants need nonlinear ``dynamics`` and an empirical stationary
    covariance ``S_approx``; they start from ``(0, S_approx)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = X.shape[0]
    if T < 1:
        raise ValueError("need at least one observation")
    if variant not in VARIANTS:
        raise ValueError(f"unknown DKF variant {variant!r}")
    F, Qs = dm.evaluate(X)
    Qinvs = _batch_qinv(Qs)
    h = np.einsum("tij,tj->ti", Qinvs, F)

    if variant in ("hybrid-ekf", "hybrid-ukf"):
        if dynamics is None or S_approx is None:
            raise ValueError("hybrid variants need dynamics and S_approx")
        return _hybrid_loop(X, variant[7:], dynamics, F, Qs, S_approx, cfg)

    if init not in ("prior", "data"):
        raise ValueError(f"init must be 'prior' or 'data', not {init!r}")
    if variant == "exact":
        Sinv = pd_inv(state.S, "S")
        fb = _batch_fallback(Qinvs, Sinv)
        J = Qinvs - np.where(fb[:, None, None], 0.0, Sinv[None])
        if init == "prior":
            means, covs = _backend.info_scan(J, h, state.A, state.gamma, np.zeros(state.dim), state.S)
            return FilterResult(means, covs, fb)
        fb[0] = False
    else:
        J = Qinvs
        fb = np.zeros(T, dtype=bool)

    means = np.empty_like(F)
    covs = np.empty_like(Qs)
    means[0] = F[0]
    covs[0] = Qs[0]
    if T > 1:
        m, c = _backend.info_scan(J[1:], h[1:], state.A, state.gamma, F[0], Qs[0])
        means[1:] = m
        covs[1:] = c
    return FilterResult(means, covs, fb)


def _hybrid_loop(X, kind, dynamics, F, Qs, S_approx, cfg):
    T, d = F.shape
    means = np.empty((T, d))
    covs = np.empty((T, d, d))
    fb = np.zeros(T, dtype=bool)
    belief = GaussianBelief(np.zeros(d), S_approx)
    for t in range(T):
        dm_t = DiscriminativeModel(lambda _x, f=F[t]: f, lambda _x, q=Qs[t]: q)
        rep = hybrid_step(belief, kind, dynamics, dm_t, S_approx, X[t], cfg)
        belief = rep.belief
        means[t] = belief.mean
        covs[t] = belief.cov
        fb[t] = rep.used_robust_fallback
    return FilterResult(means, covs, fb)


def dkf_filter_stepwise(X, state, dm, variant="exact"):
    """Reference loop over :func:`dkf_step` / :func:`robust_dkf_step`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = X.shape[0]
    d = state.dim
    means = np.empty((T, d))
    covs = np.empty((T, d, d))
    fb = np.zeros(T, dtype=bool)
    belief = GaussianBelief(np.zeros(d), state.S) if variant == "exact" else None
    for t in range(T):
        if variant == "exact":
            rep = dkf_step(belief, state, dm, X[t])
            belief = rep.belief
            fb[t] = rep.used_robust_fallback
        else:
            belief = robust_dkf_step(belief, state, dm, X[t], t + 1)
        means[t] = belief.mean
        covs[t] = belief.cov
    return FilterResult(means, covs, fb)


def pf_dkf_reweight_loglik(dm, S_approx, mean_approx=None):
    """Particle log-weights from the discriminative measurement
    approximation ``log N(z; f(x), Q(x)) - log N(z; m, S_approx)``."""
    Sinv = pd_inv(S_approx)
    m = np.zeros(S_approx.shape[0]) if mean_approx is None else np.asarray(mean_approx)

    def loglik(x, Z):
        f, Q = _eval(dm, x)
        Qinv = _qinv(Q)
        r1 = Z - f
        r0 = Z - m
        return -0.5 * np.einsum("ni,ij,nj->n", r1, Qinv, r1) + 0.5 * np.einsum("ni,ij,nj->n", r0, Sinv, r0)

    return loglik
