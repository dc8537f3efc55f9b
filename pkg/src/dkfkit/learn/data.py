"""Supervised training pairs."""
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientDataError


@dataclass(frozen=True, eq=False)
class SupervisedSet:
    """Paired observations ``xs`` (m, n) and states ``zs`` (m, d)."""

    xs: np.ndarray
    zs: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        zs = np.asarray(self.zs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        if zs.ndim == 1:
            zs = zs[:, None]
        if xs.shape[0] != zs.shape[0]:
            raise ValueError(f"row mismatch: {xs.shape[0]} observations vs {zs.shape[0]} states")
        if xs.shape[0] < 1:
            raise InsufficientDataError("need at least one training pair")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(zs))):
            raise ValueError("training data contains non-finite entries")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "zs", zs)

    @property
    def m(self):
        return self.xs.shape[0]

    @property
    def n(self):
        return self.xs.shape[1]

    @property
    def d(self):
        return self.zs.shape[1]

    def subset(self, idx):
        return SupervisedSet(self.xs[idx], self.zs[idx])

    def split(self, rng, fraction=2 / 3):
        """Random partition into two disjoint sets, the first holding
        ``round(fraction * m)`` pairs."""
        perm = rng.permutation(self.m)
        k = int(round(fraction * self.m))
        return self.subset(np.sort(perm[:k])), self.subset(np.sort(perm[k:]))


def ridge_epsilon(zs, rel=1e-6):
    """Ridge size tied to the mean per-coordinate variance of the states."""
    v = float(np.mean(np.var(np.atleast_2d(zs), axis=0)))
    return rel * v if v > 0 else rel
