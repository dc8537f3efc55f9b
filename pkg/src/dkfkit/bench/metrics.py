"""Error metrics for filtered state estimates."""
import numpy as np
from scipy.stats import norm

from ..errors import CoverageError, NormalizationError, UndefinedMetricError


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def rmse(pred, truth):
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def normalized_rmse(pred, truth):
    """RMSE divided by the RMS of ``truth``; the zero predictor scores 1."""
    pred, truth = _pair(pred, truth)
    scale = float(np.sqrt(np.mean(truth ** 2)))
    if scale == 0.0:
        raise NormalizationError("truth is identically zero")
    return rmse(pred, truth) / scale


def angular_errors(pred, truth):
    """Absolute angle between matching rows, in [0, pi]; rows with a zero
    truth vector are dropped. Returns ``(errors, n_skipped)``."""
    pred, truth = _pair(pred, truth)
    if pred.ndim != 2 or pred.shape[1] != 2:
        raise ValueError("angular error needs (T, 2) inputs")
    keep = np.any(truth != 0, axis=1)
    diff = np.arctan2(pred[keep, 1], pred[keep, 0]) - np.arctan2(truth[keep, 1], truth[keep, 0])
    err = np.abs(np.mod(diff + np.pi, 2 * np.pi) - np.pi)
    return err, int((~keep).sum())


def mean_abs_angular_error(pred, truth):
    err, _ = angular_errors(pred, truth)
    if err.size == 0:
        raise UndefinedMetricError("every row has a zero truth vector")
    return float(err.mean())


def tv_distance_grid(belief, ref, coverage_tol=1e-8):
    """Total variation between a 1-D Gaussian belief and a grid posterior.

    The Gaussian is discretized as ``density * cell width`` on the same
    grid. Raises :class:`CoverageError` when either density is not
    negligible at the grid boundary.
    """
    mu = float(np.asarray(belief.mean).ravel()[0])
    sd = float(np.sqrt(np.asarray(belief.cov).ravel()[0]))
    g = ref.grid
    dens = norm.pdf(g, mu, sd)
    peak = norm.pdf(mu, mu, sd)
    ref_dens = ref.mass / ref.spacing
    for name, p, top in (("belief", dens, peak), ("reference", ref_dens, ref_dens.max())):
        if max(p[0], p[-1]) > coverage_tol * top:
            raise CoverageError(f"grid does not cover the {name} density")
    if not g[0] <= mu <= g[-1] or abs(np.sum(dens * ref.spacing) - 1.0) > 1e-3:
        # boundary density alone misses a belief lying wholly off the grid
        raise CoverageError("grid does not cover the belief mass")
    tv = 0.5 * np.sum(np.abs(dens * ref.spacing - ref.mass))
    return float(min(max(tv, 0.0), 1.0))
