"""State-space model specifications, trajectory simulation and closed-form
discriminative moments ``f(x) = E[Z|X=x]``, ``Q(x) = V[Z|X=x]``.

Every observation model exposes the same small surface:

``dim`` / ``state_dim``
    observation and state dimensions,
``sample(Z, rng)``
    draw one observation per row of ``Z``,
``loglik(x, Z)``
    ``log p(x | z)`` for every row of ``Z`` (particle and grid filters),
``mean(z)`` / ``jacobian(z)``
    ``E[X | Z=z]`` and its derivative (EKF/UKF baselines).
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

from .errors import DegenerateModelError, InvalidCovarianceError, UnstableDynamicsError
from .gaussian import (
    LOG_2PI,
    check_pd,
    cholesky,
    pd_inv,
    spectral_radius,
    stationary_covariance,
    symmetrize,
)

_STATIONARITY_TOL = 1e-8
NONLINEAR_BURN_IN = 1000


def _mat(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _spd(M, name):
    M = symmetrize(_mat(M, name))
    if not check_pd(M):
        raise InvalidCovarianceError(f"{name} must be symmetric positive definite")
    return M


# ---------------------------------------------------------------------------
# state dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearStateSpec:
    """Stationary VAR(1) latent dynamics ``Z_t = A Z_{t-1} + N(0, gamma)``
    with marginal covariance ``S = A S A^T + gamma``."""

    A: np.ndarray
    gamma: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A")
        gamma = _spd(self.gamma, "gamma")
        S = _spd(self.S, "S")
        d = A.shape[0]
        if A.shape != (d, d) or gamma.shape != (d, d) or S.shape != (d, d):
            raise ValueError("A, gamma and S must all be d x d")
        rho = spectral_radius(A)
        if rho >= 1.0:
            raise UnstableDynamicsError(f"spectral radius {rho:.6g} >= 1", spectral_radius=rho)
        resid = np.max(np.abs(S - A @ S @ A.T - gamma))
        if resid > _STATIONARITY_TOL * max(1.0, np.max(np.abs(S))):
            raise ValueError(f"S is not stationary for (A, gamma): residual {resid:.3g}")
        for arr in (A, gamma, S):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "S", S)

    @classmethod
    def from_dynamics(cls, A, gamma):
        A = _mat(A, "A")
        return cls(A, gamma, stationary_covariance(A, gamma))

    @classmethod
    def from_stationary(cls, A, S):
        """Build from ``A`` and a target ``S`` with ``gamma = S - A S A^T``."""
        A = _mat(A, "A")
        S = symmetrize(_mat(S, "S"))
        return cls(A, symmetrize(S - A @ S @ A.T), S)

    @property
    def dim(self):
        return self.A.shape[0]

    def mean(self, z):
        return np.asarray(z) @ self.A.T

    def jacobian(self, z):
        return self.A

    def sample_initial(self, n, rng):
        return rng.standard_normal((n, self.dim)) @ cholesky(self.S).T

    def sample(self, Z, rng):
        Z = np.atleast_2d(Z)
        noise = rng.standard_normal(Z.shape) @ cholesky(self.gamma).T
        return Z @ self.A.T + noise

    def transition_logpdf(self, z_prev, z):
        """Scalar-state transition density used to build grid kernels."""
        if self.dim != 1:
            raise ValueError("grid transition kernels are 1-D only")
        a = self.A[0, 0]
        g = self.gamma[0, 0]
        diff = np.asarray(z)[None, :] - a * np.asarray(z_prev)[:, None]
        return -0.5 * diff * diff / g - 0.5 * np.log(2 * np.pi * g)


@dataclass(frozen=True, eq=False)
class SineDynamics:
    """Nonlinear dynamics ``Z_t = A (sin Z_{t-1} + Z_{t-1}) + N(0, gamma)``."""

    A: np.ndarray
    gamma: np.ndarray
    burn_in: int = NONLINEAR_BURN_IN

    def __post_init__(self):
        A = _mat(self.A, "A")
        gamma = _spd(self.gamma, "gamma")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "gamma", gamma)

    @property
    def dim(self):
        return self.A.shape[0]

    def mean(self, z):
        z = np.asarray(z, dtype=float)
        return (np.sin(z) + z) @ self.A.T

    def jacobian(self, z):
        z = np.asarray(z, dtype=float)
        return self.A * (np.cos(z) + 1.0)[None, :]

    def sample(self, Z, rng):
        Z = np.atleast_2d(Z)
        noise = rng.standard_normal(Z.shape) @ cholesky(self.gamma).T
        return self.mean(Z) + noise

    def sample_initial(self, n, rng):
        Z = np.zeros((n, self.dim))
        for _ in range(self.burn_in):
            Z = self.sample(Z, rng)
        return Z

    def empirical_stationary(self, n_samples, rng, chains=100):
        """Mean and covariance of ``n_samples`` draws from ``chains``
        independent burnt-in chains."""
        Z = self.sample_initial(chains, rng)
        draws = []
        total = 0
        while total < n_samples:
            Z = self.sample(Z, rng)
            draws.append(Z)
            total += chains
        D = np.concatenate(draws)[:n_samples]
        return D.mean(axis=0), symmetrize(np.cov(D, rowvar=False).reshape(self.dim, self.dim))


# ---------------------------------------------------------------------------
# observation models
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearGaussianObs:
    """``X_t | Z_t ~ N(H Z_t + b, lambda)``."""

    H: np.ndarray
    b: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        H = _mat(self.H, "H")
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        lam = _spd(self.lam, "lambda")
        if b.shape != (H.shape[0],) or lam.shape != (H.shape[0], H.shape[0]):
            raise ValueError("H, b and lambda have inconsistent shapes")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "_chol", cholesky(lam, "lambda"))

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def state_dim(self):
        return self.H.shape[1]

    def mean(self, z):
        return np.asarray(z) @ self.H.T + self.b

    def jacobian(self, z):
        return self.H

    def sample(self, Z, rng):
        Z = np.atleast_2d(Z)
        return self.mean(Z) + rng.standard_normal((Z.shape[0], self.dim)) @ self._chol.T

    def loglik(self, x, Z):
        R = x[None, :] - self.mean(np.atleast_2d(Z))
        W = scipy.linalg.solve_triangular(self._chol, R.T, lower=True)
        return (
            -0.5 * np.sum(W * W, axis=0)
            - np.sum(np.log(np.diag(self._chol)))
            - 0.5 * self.dim * LOG_2PI
        )

    def kalman_moments(self, S):
        """Exact ``(f, Q)`` of the linear-Gaussian model: ``f`` linear and
        ``Q`` constant, so the DKF coincides with the Kalman filter."""
        return MixtureMoments(
            KalmanMixtureObs((1.0,), (self.H,), (self.lam,)), S, offsets=(self.b,)
        )


@dataclass(frozen=True, eq=False)
class KalmanMixtureObs:
    """``p(x|z) = sum_l pi_l N(x; H_l z, lambda_l)``."""

    pis: tuple
    Hs: tuple
    lambdas: tuple

    def __post_init__(self):
        pis = np.asarray(self.pis, dtype=float)
        if pis.ndim != 1 or np.any(pis < 0) or abs(pis.sum() - 1.0) > 1e-12:
            raise ValueError("pis must be a probability vector")
        Hs = tuple(_mat(H, "H_l") for H in self.Hs)
        lambdas = tuple(_spd(L, "lambda_l") for L in self.lambdas)
        if not (len(Hs) == len(lambdas) == pis.shape[0]):
            raise ValueError("pis, Hs and lambdas must have equal length")
        n, d = Hs[0].shape
        if any(H.shape != (n, d) for H in Hs) or any(L.shape != (n, n) for L in lambdas):
            raise ValueError("mixture components have inconsistent shapes")
        object.__setattr__(self, "pis", pis)
        object.__setattr__(self, "Hs", Hs)
        object.__setattr__(self, "lambdas", lambdas)
        chols = tuple(cholesky(L) for L in lambdas)
        object.__setattr__(self, "_chols", chols)
        # whitened factors: L^-1 and L^-1 H, so the likelihood costs O(N n d)
        object.__setattr__(self, "_white", tuple(
            (scipy.linalg.solve_triangular(L, np.eye(n), lower=True),
             scipy.linalg.solve_triangular(L, H, lower=True),
             float(np.sum(np.log(np.diag(L)))))
            for H, L in zip(Hs, chols)))

    @property
    def dim(self):
        return self.Hs[0].shape[0]

    @property
    def state_dim(self):
        return self.Hs[0].shape[1]

    @property
    def H_bar(self):
        return sum(p * H for p, H in zip(self.pis, self.Hs))

    def mean(self, z):
        return np.asarray(z) @ self.H_bar.T

    def jacobian(self, z):
        return self.H_bar

    def sample(self, Z, rng):
        Z = np.atleast_2d(Z)
        T = Z.shape[0]
        comp = rng.choice(len(self.pis), size=T, p=self.pis)
        eps = rng.standard_normal((T, self.dim))
        X = np.empty((T, self.dim))
        for ell, (H, L) in enumerate(zip(self.Hs, self._chols)):
            rows = comp == ell
            X[rows] = Z[rows] @ H.T + eps[rows] @ L.T
        return X

    def loglik(self, x, Z):
        Z = np.atleast_2d(Z)
        x = np.asarray(x, dtype=float)
        terms = []
        for p, (Linv, LinvH, logdet_half) in zip(self.pis, self._white):
            W = (Linv @ x)[None, :] - Z @ LinvH.T
            log_p = np.log(p) if p > 0 else -np.inf
            terms.append(log_p - 0.5 * np.sum(W * W, axis=1) - logdet_half - 0.5 * self.dim * LOG_2PI)
        return logsumexp(np.vstack(terms), axis=0)


class MixtureMoments:
    """Precomputed closed-form ``(f, Q)`` for a Kalman observation mixture
    under the prior ``Z ~ N(0, S)``.

    Mixture weights are evaluated in log space with max subtraction so
    they never underflow jointly.
    """

    def __init__(self, obs, S, offsets=None):
        S = _spd(S, "S")
        Sinv = pd_inv(S)
        self.obs = obs
        self.S = S
        self.log_pis = np.log(np.where(obs.pis > 0, obs.pis, 1.0)) + np.where(obs.pis > 0, 0.0, -np.inf)
        n = obs.dim
        self.offsets = (
            tuple(np.zeros(n) for _ in obs.Hs)
            if offsets is None
            else tuple(np.asarray(b, dtype=float) for b in offsets)
        )
        self.D, self.V, self.G_chol, self.G_logdet = [], [], [], []
        for H, L in zip(obs.Hs, obs.lambdas):
            Lam_inv_H = scipy.linalg.cho_solve((cholesky(L), True), H)
            D = pd_inv(H.T @ Lam_inv_H + Sinv)
            self.D.append(D)
            self.V.append(D @ Lam_inv_H.T)
            Gc = cholesky(H @ S @ H.T + L, "G_l")
            self.G_chol.append(Gc)
            self.G_logdet.append(2.0 * np.sum(np.log(np.diag(Gc))))

    def log_weights(self, X):
        X = np.atleast_2d(X)
        n = X.shape[1]
        out = []
        for lp, Gc, ld, b in zip(self.log_pis, self.G_chol, self.G_logdet, self.offsets):
            W = scipy.linalg.solve_triangular(Gc, (X - b).T, lower=True)
            out.append(lp - 0.5 * np.sum(W * W, axis=0) - 0.5 * ld - 0.5 * n * LOG_2PI)
        return np.vstack(out)

    def __call__(self, X):
        """Batch evaluation: returns ``F`` of shape (T, d) and ``Q`` of shape (T, d, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        logw = self.log_weights(X)
        top = np.max(logw, axis=0)
        if not np.all(np.isfinite(top)):
            raise DegenerateModelError("every mixture weight is zero for some observation")
        r = np.exp(logw - top)
        r /= r.sum(axis=0)
        means = [(X - b) @ V.T for V, b in zip(self.V, self.offsets)]
        F = sum(r[ell][:, None] * means[ell] for ell in range(len(means)))
        Q = sum(r[ell][:, None, None] * self.D[ell][None] for ell in range(len(means)))
        for ell, m in enumerate(means):
            c = m - F
            Q = Q + r[ell][:, None, None] * (c[:, :, None] * c[:, None, :])
        return F, symmetrize(Q)


def mixture_moments(obs, S, x):
    """Exact conditional mean and covariance of ``Z | X = x`` for a Kalman
    observation mixture with stationary prior ``N(0, S)``."""
    F, Q = MixtureMoments(obs, S)(np.atleast_2d(x))
    return F[0], Q[0]


@dataclass(frozen=True, eq=False)
class BernoulliMixtureObs:
    """Mixture of independent Bernoulli observation models on a partition
    of the real line, replicated independently over ``state_dim`` state
    coordinates.

    For state coordinate ``k`` the observation block ``x[k*n:(k+1)*n]``
    has ``P(x_i = 1 | z) = alpha_li + beta_li * 1{z >= c_{i-1}}`` under
    component ``l``; the component is drawn independently per coordinate.
    ``cuts`` holds the finite interior cut points ``c_1 < ... < c_{n-1}``.
    """

    cuts: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    pis: np.ndarray
    state_dim: int = 1

    def __post_init__(self):
        cuts = np.atleast_1d(np.asarray(self.cuts, dtype=float))
        alphas = np.atleast_2d(np.asarray(self.alphas, dtype=float))
        betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
        pis = np.atleast_1d(np.asarray(self.pis, dtype=float))
        n = cuts.shape[0] + 1
        L = pis.shape[0]
        if alphas.shape != (L, n) or betas.shape != (L, n):
            raise ValueError(f"alphas and betas must be {L} x {n}")
        if np.any(np.diff(cuts) <= 0):
            raise ValueError("cuts must be strictly increasing")
        tot = alphas + betas
        if np.any(alphas < 0) or np.any(alphas > 1) or np.any(tot < 0) or np.any(tot > 1):
            raise ValueError("need alpha >= 0 and 0 <= alpha + beta <= 1")
        if np.any(pis < 0) or abs(pis.sum() - 1.0) > 1e-12:
            raise ValueError("pis must be a probability vector")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "pis", pis)

    @classmethod
    def equal_mass(cls, n_cells, alpha=0.001, beta=0.998, state_dim=1, scale=1.0):
        """The symmetric two-component instance with cells of equal prior
        mass under ``N(0, scale**2)``; ``g_2 = 1 - g_1`` so the average
        firing probability is 0.5 regardless of ``z``."""
        cuts = scale * ndtri(np.arange(1, n_cells) / n_cells)
        a = np.full((2, n_cells), alpha)
        b = np.full((2, n_cells), beta)
        a[1] = 1.0 - alpha
        b[1] = -beta
        return cls(cuts, a, b, np.array([0.5, 0.5]), state_dim)

    @property
    def n_cells(self):
        return self.cuts.shape[0] + 1

    @property
    def dim(self):
        return self.n_cells * self.state_dim

    def _probs(self, Z):
        """P(X=1 | z) per component: shape (L, T, d, n)."""
        Z = np.atleast_2d(Z)
        ind = Z[:, :, None] >= np.concatenate([[-np.inf], self.cuts])[None, None, :]
        return self.alphas[:, None, None, :] + self.betas[:, None, None, :] * ind[None]

    def mean(self, z):
        Z = np.atleast_2d(z)
        p = np.tensordot(self.pis, self._probs(Z), axes=1)
        out = p.reshape(Z.shape[0], self.dim)
        return out[0] if np.ndim(z) == 1 else out

    def jacobian(self, z):
        # piecewise constant in z
        return np.zeros((self.dim, self.state_dim))

    def sample(self, Z, rng):
        Z = np.atleast_2d(Z)
        T, d = Z.shape
        comp = rng.choice(len(self.pis), size=(T, d), p=self.pis)
        probs = self._probs(Z)  # (L, T, d, n)
        p = np.take_along_axis(probs, comp[None, :, :, None], axis=0)[0]
        u = rng.random(p.shape)
        return (u < p).astype(float).reshape(T, self.dim)

    def _coord_loglik(self, x, Z):
        """Per-coordinate log-likelihood terms, shape (T, d)."""
        Z = np.atleast_2d(Z)
        xb = np.asarray(x).reshape(self.state_dim, self.n_cells)
        probs = self._probs(Z)  # (L, T, d, n)
        with np.errstate(divide="ignore"):
            lp = np.where(xb[None, None] > 0.5, np.log(probs), np.log1p(-probs))
            per_comp = lp.sum(axis=3) + np.log(self.pis)[:, None, None]
        return logsumexp(per_comp, axis=0)

    def cell_index(self, Z):
        """Index of the partition cell holding each entry of ``Z``."""
        return np.searchsorted(self.cuts, Z, side="right")

    def loglik(self, x, Z):
        # the likelihood is constant on cells: tabulate once per x, then look up
        Z = np.atleast_2d(Z)
        reps = np.concatenate([[self.cuts[0] - 1.0] if self.cuts.size else [0.0], self.cuts])
        table = self._coord_loglik(x, np.repeat(reps[:, None], self.state_dim, axis=1))
        idx = self.cell_index(Z)
        return np.take_along_axis(table, idx, axis=0).sum(axis=1)


class BernoulliMoments:
    """Precomputed cell integrals for the Bernoulli mixture under a
    per-coordinate ``N(0, prior_var[k])`` prior."""

    def __init__(self, obs, prior_var=None):
        self.obs = obs
        d = obs.state_dim
        pv = np.ones(d) if prior_var is None else np.broadcast_to(np.asarray(prior_var, float), (d,))
        self.prior_sd = np.sqrt(pv)
        edges = np.concatenate([[-np.inf], obs.cuts, [np.inf]])
        self.m0, self.m1, self.m2 = [], [], []
        for sd in self.prior_sd:
            u = edges / sd
            phi = np.where(np.isfinite(u), np.exp(-0.5 * np.where(np.isfinite(u), u, 0.0) ** 2), 0.0)
            phi = phi / np.sqrt(2 * np.pi)
            uphi = np.where(np.isfinite(u), np.where(np.isfinite(u), u, 0.0) * phi, 0.0)
            cdf = ndtr(u)
            # standard normal cell moments, scaled back by sd
            m0 = np.diff(cdf)
            m0 = np.where(m0 > 0, m0, 0.0)
            # tail cells lose precision from cdf differences; use log_ndtr there
            m0[0] = np.exp(log_ndtr(u[1]))
            m0[-1] = np.exp(log_ndtr(-u[-2]))
            m1 = -np.diff(phi) * sd
            m2 = (m0 - np.diff(uphi)) * sd * sd
            self.m0.append(m0)
            self.m1.append(m1)
            self.m2.append(m2)
        self.m0 = np.array(self.m0)
        self.m1 = np.array(self.m1)
        self.m2 = np.array(self.m2)
        with np.errstate(divide="ignore"):
            self.log_a1 = np.log(obs.alphas + obs.betas)
            self.log_a0 = np.log1p(-(obs.alphas + obs.betas))
            self.log_b1 = np.log(obs.alphas)
            self.log_b0 = np.log1p(-obs.alphas)

    def log_cell_weights(self, xb):
        """``log sum_l gamma_{i,l}(x)`` for a batch of single-coordinate
        blocks ``xb`` of shape (T, n); returns (T, n).

        For ``z`` in cell ``C_i`` the indicator is on for ``j <= i`` and
        off for ``j > i``.
        """
        on = np.where(xb[None] > 0.5, self.log_a1[:, None, :], self.log_a0[:, None, :])
        off = np.where(xb[None] > 0.5, self.log_b1[:, None, :], self.log_b0[:, None, :])
        on_cum = np.cumsum(on, axis=2)
        off_rev = np.cumsum(off[:, :, ::-1], axis=2)[:, :, ::-1]
        off_after = np.concatenate([off_rev[:, :, 1:], np.zeros(off_rev.shape[:2] + (1,))], axis=2)
        with np.errstate(invalid="ignore"):
            per = on_cum + off_after
        per = np.where(np.isnan(per), -np.inf, per)
        with np.errstate(divide="ignore"):
            log_pis = np.log(self.obs.pis)
        return logsumexp(per + log_pis[:, None, None], axis=0)

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        T = X.shape[0]
        d = self.obs.state_dim
        n = self.obs.n_cells
        F = np.empty((T, d))
        Q = np.zeros((T, d, d))
        for k in range(d):
            lw = self.log_cell_weights(X[:, k * n:(k + 1) * n])
            top = np.max(lw, axis=1, keepdims=True)
            if not np.all(np.isfinite(top)):
                raise DegenerateModelError("observation has zero probability under the model")
            w = np.exp(lw - top)
            mass = w @ self.m0[k]
            if np.any(mass <= 0):
                raise DegenerateModelError("zero total posterior mass")
            f = (w @ self.m1[k]) / mass
            ez2 = (w @ self.m2[k]) / mass
            F[:, k] = f
            Q[:, k, k] = np.maximum(ez2 - f * f, 1e-300)
        return F, Q


def bernoulli_moments(obs, x, prior_var=None):
    """Exact ``(f, Q)`` of ``Z | X = x`` for the Bernoulli mixture."""
    F, Q = BernoulliMoments(obs, prior_var)(np.atleast_2d(x))
    return F[0], Q[0]


@dataclass(frozen=True, eq=False)
class FloorObsModel:
    """``X_t | Z_t ~ N(h(Z_t) + Z_t/3, lambda)`` where ``h`` stacks the
    component-wise floors ``floor(z - a_j)`` for each offset row ``a_j``.

    Observation layout is offset-major: block ``j`` holds
    ``floor(z - a_j) + z/3`` (``d`` entries).
    """

    offsets: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        offsets = _mat(self.offsets, "offsets")
        lam = _spd(self.lam, "lambda")
        m = offsets.shape[0] * offsets.shape[1]
        if lam.shape != (m, m):
            raise ValueError(f"lambda must be {m} x {m}")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "_chol", cholesky(lam))

    @property
    def state_dim(self):
        return self.offsets.shape[1]

    @property
    def dim(self):
        return self.offsets.size

    def h(self, Z):
        Z = np.atleast_2d(Z)
        return np.floor(Z[:, None, :] - self.offsets[None]).reshape(Z.shape[0], self.dim)

    def mean(self, z):
        z = np.asarray(z, dtype=float)
        Z = np.atleast_2d(z)
        out = self.h(Z) + np.tile(Z / 3.0, (1, self.offsets.shape[0]))
        return out[0] if z.ndim == 1 else out

    def jacobian(self, z):
        # floor contributes zero derivative almost everywhere
        k = self.offsets.shape[0]
        return np.tile(np.eye(self.state_dim) / 3.0, (k, 1))

    def sample(self, Z, rng):
        Z = np.atleast_2d(Z)
        return self.mean(Z) + rng.standard_normal((Z.shape[0], self.dim)) @ self._chol.T

    def loglik(self, x, Z):
        R = x[None, :] - self.mean(np.atleast_2d(Z))
        W = scipy.linalg.solve_triangular(self._chol, R.T, lower=True)
        return (
            -0.5 * np.sum(W * W, axis=0)
            - np.sum(np.log(np.diag(self._chol)))
            - 0.5 * self.dim * LOG_2PI
        )


def floor_observe(model, z, rng):
    """Draw one observation ``h(z) + z/3 + eps`` from the floor model."""
    return model.sample(np.atleast_2d(z), rng)[0]


# ---------------------------------------------------------------------------
# default instances
# ---------------------------------------------------------------------------


def shifted_identity(d, diag, shift, reading="all"):
    """``diag * I + shift`` under one of two readings: ``"all"`` adds
    ``shift`` to every entry, ``"offdiag"`` only to off-diagonal ones."""
    if reading == "all":
        return diag * np.eye(d) + shift * np.ones((d, d))
    if reading == "offdiag":
        return diag * np.eye(d) + shift * (np.ones((d, d)) - np.eye(d))
    raise ValueError(f"unknown reading {reading!r}")


def default_mixture_model(n, rng, d=10, reading="all", H1=None):
    """The vanishing-mean Kalman mixture: ``A = 0.91 I - 0.1``, ``S = I``,
    ``H_2 = -H_1``, ``Lambda_1 = I``, ``Lambda_2 = I/8``."""
    state = LinearStateSpec.from_stationary(shifted_identity(d, 0.91, -0.1, reading), np.eye(d))
    if H1 is None:
        H1 = rng.standard_normal((n, d))
    H1 = np.asarray(H1, dtype=float)[:n]
    obs = KalmanMixtureObs((0.5, 0.5), (H1, -H1), (np.eye(n), np.eye(n) / 8.0))
    return state, obs


def default_bernoulli_model(n_total, d=3, reading="all", alpha=0.001, beta=0.998):
    if n_total % d:
        raise ValueError("observation dimension must be a multiple of the state dimension")
    state = LinearStateSpec.from_stationary(shifted_identity(d, 0.3, 0.2, reading), np.eye(d))
    obs = BernoulliMixtureObs.equal_mass(n_total // d, alpha, beta, state_dim=d)
    return state, obs


@dataclass(frozen=True)
class FloorDefaults:
    d: int = 2
    offsets_per_dim: int = 10
    offset_low: float = -2.0
    offset_high: float = 2.0
    a: float = 0.4
    gamma: float = 1.0
    lam: float = 4.0


def default_floor_model(params=FloorDefaults()):
    d = params.d
    grid = np.linspace(params.offset_low, params.offset_high, params.offsets_per_dim)
    offsets = np.repeat(grid[:, None], d, axis=1)
    dyn = SineDynamics(params.a * np.eye(d), params.gamma * np.eye(d))
    obs = FloorObsModel(offsets, params.lam * np.eye(offsets.size))
    return dyn, obs


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    seed: int = 0

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.states, dtype=float))
        X = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if Z.shape[0] != X.shape[0] or Z.shape[0] < 1:
            raise ValueError("states and observations need the same T >= 1 rows")
        object.__setattr__(self, "states", Z)
        object.__setattr__(self, "observations", X)

    def __len__(self):
        return self.states.shape[0]


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_states(state, T, rng):
    Z = np.empty((T, state.dim))
    Z[0] = state.sample_initial(1, rng)[0]
    for t in range(1, T):
        Z[t] = state.sample(Z[t - 1:t], rng)[0]
    return Z


def simulate(state, obs, T, seed=0):
    """Draw ``(Z_{1:T}, X_{1:T})`` from the state-space model.

    ``seed`` may be an integer or a ``numpy.random.Generator``; the
    integer form is recorded on the returned trajectory.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = _as_rng(seed)
    Z = simulate_states(state, T, rng)
    X = obs.sample(Z, rng)
    return Trajectory(Z, X, seed if isinstance(seed, (int, np.integer)) else 0)
