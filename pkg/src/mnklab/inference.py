"""Small-sample inference helpers for win-scores and outcome frequencies."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats


def wilson_interval(successes: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval; ``successes`` may be fractional (draws count half)."""
    if n <= 0:
        raise ValueError("need at least one trial")
    z = float(stats.norm.ppf(0.5 + level / 2))
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(max(p * (1 - p) / n + z * z / (4 * n * n), 0.0)) / denom
    lo = 0.0 if p <= 0 else max(0.0, centre - half)
    hi = 1.0 if p >= 1 else min(1.0, centre + half)
    return lo, hi


def one_sided_improvement(scores_new: np.ndarray, scores_old: np.ndarray) -> tuple[float, float]:
    """(z, p) for H1: mean win-score of ``scores_new`` exceeds that of ``scores_old``.

    Two-sample z-test on per-game scores with the pooled binomial variance.
    """
    a = np.asarray(scores_new, dtype=float)
    b = np.asarray(scores_old, dtype=float)
    pa, pb = a.mean(), b.mean()
    pool = (a.sum() + b.sum()) / (len(a) + len(b))
    se = math.sqrt(max(pool * (1 - pool), 1e-300) * (1 / len(a) + 1 / len(b)))
    z = (pa - pb) / se
    return float(z), float(stats.norm.sf(z))


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)
