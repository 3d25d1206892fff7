"""Per-task score normalization used by the numeric-target regressor.

Three steps, each strictly increasing: z-score, a robust refit of the
below-median half against half-normal quantiles, then min-max scaling
followed by ``log(y + eps)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm


class DegenerateScores(ValueError):
    """Scores carry no ranking signal (constant, or too few)."""


@dataclass
class TaskScoreStats:
    mean: float
    std: float
    robust_mean: float = 0.0
    robust_std: float = 1.0
    post_min: float = 0.0
    post_max: float = 1.0
    log_eps: float = 1e-3
    robust_skipped: bool = False
    robust_enabled: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskScoreStats":
        return cls(**d)

    def apply(self, ys) -> np.ndarray:
        """Normalize new scores of the same task with the fitted statistics."""
        ys = np.asarray(ys, dtype=float)
        z = (ys - self.mean) / self.std
        z = (z - self.robust_mean) / self.robust_std
        z = np.clip(z, self.post_min, self.post_max)
        return np.log((z - self.post_min) / (self.post_max - self.post_min) + self.log_eps)


def zscore_fit_apply(ys) -> tuple[float, float, np.ndarray]:
    ys = np.asarray(ys, dtype=float)
    if ys.size < 2:
        raise DegenerateScores("need at least 2 scores")
    mean = float(ys.mean())
    std = float(ys.std())  # population std
    if std <= 1e-12:
        raise DegenerateScores("scores are constant")
    return mean, std, (ys - mean) / std


def robust_refit(ys) -> tuple[float, float, np.ndarray, bool]:
    """Fit ``y ~ a + b * Phi^-1(p / 2)`` on the below-median scores.

    ``p = (rank + 0.5) / |S|`` is the empirical percentile inside the
    below-median subset, so ``Phi^-1(p / 2)`` is the matching lower-half
    normal quantile.  Returns ``(robust_mean, robust_std, transformed, skipped)``;
    with fewer than 4 scores or fewer than 2 below the median the transform
    is the identity and ``skipped`` is True.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.size < 4:
        return 0.0, 1.0, ys.copy(), True
    below = np.sort(ys[ys < np.median(ys)])
    if below.size < 2:
        return 0.0, 1.0, ys.copy(), True
    p = (np.arange(below.size) + 0.5) / below.size
    q = norm.ppf(p / 2.0)
    slope, intercept = np.polyfit(q, below, 1)
    robust_std = max(float(slope), 1e-6)
    robust_mean = float(intercept)
    return robust_mean, robust_std, (ys - robust_mean) / robust_std, False


def minmax_log(ys, eps: float = 1e-3) -> tuple[float, float, np.ndarray]:
    ys = np.asarray(ys, dtype=float)
    if eps <= 0:
        raise ValueError("eps must be positive")
    lo, hi = float(ys.min()), float(ys.max())
    if not hi > lo:
        raise DegenerateScores("max equals min")
    return lo, hi, np.log((ys - lo) / (hi - lo) + eps)


def normalize_task(ys, eps: float = 1e-3, robust: bool = True) -> tuple[TaskScoreStats, np.ndarray]:
    mean, std, z = zscore_fit_apply(ys)
    if robust:
        r_mean, r_std, z, skipped = robust_refit(z)
    else:
        r_mean, r_std, skipped = 0.0, 1.0, True
    lo, hi, out = minmax_log(z, eps)
    stats = TaskScoreStats(
        mean=mean,
        std=std,
        robust_mean=r_mean,
        robust_std=r_std,
        post_min=lo,
        post_max=hi,
        log_eps=eps,
        robust_skipped=skipped,
        robust_enabled=robust,
    )
    return stats, out
