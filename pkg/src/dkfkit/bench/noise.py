"""Feature corruption used by the robustness protocol."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        std = np.asarray(self.std, dtype=float)
        if np.any(std <= 0):
            raise ValueError("feature standard deviations must be positive")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", std)

    @classmethod
    def from_block(cls, features):
        features = np.atleast_2d(features)
        return cls(features.mean(axis=0), features.std(axis=0))


def inject_noise(features, feature_index, offset_z, stats):
    """Copy of ``features`` with one column shifted by ``offset_z`` reference stds."""
    out = np.array(features, dtype=float, copy=True)
    if not 0 <= feature_index < out.shape[1]:
        raise IndexError(f"feature index {feature_index} out of range for {out.shape[1]} features")
    out[:, feature_index] += offset_z * stats.std[feature_index]
    return out


def saturate_features(features, threshold_z, stats):
    """Clamp every column's z-score to ``[-threshold_z, threshold_z]``."""
    if threshold_z <= 0:
        raise ValueError("threshold_z must be positive")
    z = (np.asarray(features, dtype=float) - stats.mean) / stats.std
    return np.clip(z, -threshold_z, threshold_z) * stats.std + stats.mean
