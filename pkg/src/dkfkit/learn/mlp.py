"""One-hidden-layer tanh network trained by full-batch gradient descent."""
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DivergenceError


@dataclass(frozen=True, eq=False)
class MlpModel:
    """``z = W2 tanh(W1 x + b1) + b2`` in the original data units."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite weights in {name}")
            object.__setattr__(self, name, v)

    @property
    def hidden_width(self):
        return self.W1.shape[0]

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.tanh(X @ self.W1.T + self.b1) @ self.W2.T + self.b2


def mlp_predict(model, x):
    x = np.asarray(x, dtype=float)
    pred = model.predict(x)
    return pred[0] if x.ndim == 1 else pred


def _unpack(theta, n, h, d):
    i = 0
    W1 = theta[i:i + h * n].reshape(h, n); i += h * n
    b1 = theta[i:i + h]; i += h
    W2 = theta[i:i + d * h].reshape(d, h); i += d * h
    b2 = theta[i:i + d]
    return W1, b1, W2, b2


def loss_and_grad(theta, X, Z, h, weight_decay=0.0):
    """Mean squared error (per sample, summed over outputs, halved) plus
    ``weight_decay/2`` times the squared weight norm, and its gradient."""
    m, n = X.shape
    d = Z.shape[1]
    W1, b1, W2, b2 = _unpack(theta, n, h, d)
    A = np.tanh(X @ W1.T + b1)
    E = A @ W2.T + b2 - Z
    loss = 0.5 * np.sum(E ** 2) / m + 0.5 * weight_decay * (np.sum(W1 ** 2) + np.sum(W2 ** 2))
    gE = E / m
    gW2 = gE.T @ A + weight_decay * W2
    gb2 = gE.sum(axis=0)
    gH = (gE @ W2) * (1.0 - A ** 2)
    gW1 = gH.T @ X + weight_decay * W1
    gb1 = gH.sum(axis=0)
    return loss, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def mlp_fit(data, hidden_width=20, epochs=3000, step_size=0.05, seed=0, momentum=0.9,
            weight_decay=1e-4, patience=100, val_fraction=0.1, tol=1e-7):
    """Fit on standardized inputs and targets.

    Gradient steps use a fixed step size with heavy-ball momentum. A
    random ``val_fraction`` of the pairs is held out; training stops once
    the validation loss fails to improve by ``tol`` for ``patience``
    epochs and the best weights seen are returned.
    """
    if hidden_width < 1:
        raise ConfigError("hidden_width must be >= 1")
    rng = np.random.default_rng(seed)
    X, Z = data.xs, data.zs
    mx, sx = X.mean(axis=0), X.std(axis=0)
    sx = np.where(sx > 0, sx, 1.0)
    mz, sz = Z.mean(axis=0), Z.std(axis=0)
    sz = np.where(sz > 0, sz, 1.0)
    Xs, Zs = (X - mx) / sx, (Z - mz) / sz
    m, n = Xs.shape
    d = Zs.shape[1]
    h = int(hidden_width)

    perm = rng.permutation(m)
    n_val = int(round(val_fraction * m)) if m >= 10 else 0
    tr, va = perm[n_val:], perm[:n_val]
    theta = np.concatenate([
        rng.normal(0, 1 / np.sqrt(n), h * n), np.zeros(h),
        rng.normal(0, 1 / np.sqrt(h), d * h), np.zeros(d),
    ])
    vel = np.zeros_like(theta)
    best, best_theta, stall = np.inf, theta.copy(), 0
    for _ in range(int(epochs)):
        loss, g = loss_and_grad(theta, Xs[tr], Zs[tr], h, weight_decay)
        if not np.isfinite(loss):
            raise DivergenceError("training loss is not finite; try a smaller step_size", last_stable=best_theta)
        vel = momentum * vel - step_size * g
        theta = theta + vel
        score = loss_and_grad(theta, Xs[va], Zs[va], h)[0] if n_val else loss
        if score < best - tol:
            best, best_theta, stall = score, theta.copy(), 0
        else:
            stall += 1
            if stall >= patience:
                break
    W1, b1, W2, b2 = _unpack(best_theta, n, h, d)
    W1r = W1 / sx
    return MlpModel(W1r, b1 - W1r @ mx, W2 * sz[:, None], b2 * sz + mz)
