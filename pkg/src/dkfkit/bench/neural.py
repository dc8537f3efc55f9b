"""Synthetic cursor-decoding surrogate for the feature-corruption study.

A 2-D velocity follows a stationary AR(1) process and each of ``n``
features is a cosine-tuned linear-Gaussian readout of it. Gains fall off
geometrically, so features have a well-defined SNR ranking.
"""
from dataclasses import dataclass

import numpy as np

from ..models import LinearGaussianObs, LinearStateSpec


@dataclass(frozen=True)
class NeuralDefaults:
    n: int = 40
    a: float = 0.95
    gain_hi: float = 1.5
    gain_lo: float = 0.2
    noise: float = 1.0


def neural_surrogate(rng, params=NeuralDefaults()):
    """Draw preferred directions and offsets; returns ``(state, obs)``."""
    n = params.n
    state = LinearStateSpec.from_stationary(params.a * np.eye(2), np.eye(2))
    angles = rng.uniform(0.0, 2 * np.pi, n)
    gains = np.geomspace(params.gain_hi, params.gain_lo, n)
    H = gains[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
    b = rng.standard_normal(n)
    obs = LinearGaussianObs(H, b, params.noise * np.eye(n))
    return state, obs


def feature_snr(obs):
    """Per-feature ``|H_j|^2 / lambda_jj``."""
    return np.sum(obs.H ** 2, axis=1) / np.diag(obs.lam)


def top_snr_feature(obs):
    return int(np.argmax(feature_snr(obs)))
