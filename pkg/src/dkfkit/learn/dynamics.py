"""State-dynamics regression and octant averaging of velocity labels."""
import numpy as np

from ..errors import InsufficientDataError, UnstableDynamicsError
from ..gaussian import spectral_radius, stationary_covariance, symmetrize
from ..models import LinearStateSpec
from .data import SupervisedSet, ridge_epsilon

_UNIT_ROOT_TOL = 1e-9


def fit_state_dynamics(Z=None, pairs=None, ridge=None):
    """Least-squares fit of ``z_t ~ A z_{t-1}``.

    Pass either a trajectory ``Z`` (T, d) or ``pairs = (Z_prev, Z_next)``.
    Returns a :class:`LinearStateSpec` with the residual covariance plus a
    ridge as ``Gamma`` and the matching stationary covariance.
    """
    if pairs is None:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[0] == 1:
            Z = Z.T
        prev, nxt = Z[:-1], Z[1:]
    else:
        prev, nxt = (np.asarray(p, dtype=float).reshape(len(p), -1) for p in pairs)
    d = prev.shape[1]
    if prev.shape[0] < d + 1:
        raise InsufficientDataError(f"need at least {d + 1} transition pairs")
    A = np.linalg.lstsq(prev, nxt, rcond=None)[0].T
    rho = spectral_radius(A)
    if rho >= 1.0 - _UNIT_ROOT_TOL:
        raise UnstableDynamicsError(f"fitted transition has spectral radius {rho:.6g} >= 1", rho)
    R = nxt - prev @ A.T
    eps = ridge_epsilon(np.vstack([prev, nxt])) if ridge is None else float(ridge)
    gamma = symmetrize(R.T @ R / R.shape[0] + eps * np.eye(d))
    return LinearStateSpec(A, gamma, stationary_covariance(A, gamma))


def octant_index(zs):
    """Octant ``k`` with angle in ``[k*45deg, (k+1)*45deg)``; zero rows get 0."""
    zs = np.atleast_2d(zs)
    ang = np.mod(np.arctan2(zs[:, 1], zs[:, 0]), 2 * np.pi)
    k = np.minimum((ang // (np.pi / 4)).astype(int), 7)
    zero = ~np.any(zs != 0, axis=1)
    k[zero] = 0
    return k, zero


def sparsify_octants(data, return_diagnostics=False):
    """Average the (x, z) pairs falling in each angular octant of ``z``.

    Rows come out ordered by octant index. With ``return_diagnostics`` the
    number of zero-velocity labels (placed in octant 0) is also returned.
    """
    if data.d != 2:
        raise ValueError("octant sparsification needs 2-D labels")
    k, zero = octant_index(data.zs)
    occupied = np.unique(k)
    xs = np.array([data.xs[k == o].mean(axis=0) for o in occupied])
    zs = np.array([data.zs[k == o].mean(axis=0) for o in occupied])
    out = SupervisedSet(xs, zs)
    return (out, int(zero.sum())) if return_diagnostics else out
