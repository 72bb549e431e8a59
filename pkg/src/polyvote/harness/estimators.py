"""Point estimates, standard errors and interval estimates for MC output."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from ..oracle import DiscreteDistribution, total_variation


def mean_se(x) -> tuple[float, float]:
    """Sample mean and ``std(ddof=1) / sqrt(R)``; the SE is 0 for a single draw."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no samples")
    m = float(x.mean())
    if x.size == 1:
        return m, 0.0
    return m, float(x.std(ddof=1) / math.sqrt(x.size))


def variance_se(x) -> tuple[float, float]:
    """Sample variance and its large-sample standard error."""
    x = np.asarray(x, dtype=np.float64)
    R = x.size
    if R < 2:
        raise ValueError("need at least two samples for a variance")
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    m4 = float(np.mean(d**4))
    var = m2 * R / (R - 1)
    return var, math.sqrt(max(m4 - m2 * m2, 0.0) / R)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("need at least one trial")
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def empirical_distribution(values) -> dict:
    """Empirical law of a sample of hashable (or float) outcomes."""
    keys, counts = np.unique(np.asarray(values), return_counts=True, axis=0)
    R = counts.sum()
    if keys.ndim == 1:
        return {float(k): c / R for k, c in zip(keys, counts)}
    return {tuple(float(v) for v in k): c / R for k, c in zip(keys, counts)}


def tv_to_exact(values, exact: DiscreteDistribution) -> float:
    return total_variation(empirical_distribution(values), exact.as_dict())


def histogram(values, bins: int = 40, lattice: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Counts and edges; ``lattice`` is the offset of data living on ``offset + Z``.

    Lattice data get integer-width bins centred on lattice points, so every
    bin covers the same number of attainable values.
    """
    x = np.asarray(values, dtype=np.float64)
    if lattice is None:
        counts, edges = np.histogram(x, bins=bins)
        return edges, counts
    lo = math.floor(x.min() - lattice) + lattice
    hi = math.floor(x.max() - lattice) + lattice
    width = max(1, math.ceil((hi - lo + 1) / bins))
    n = math.ceil((hi - lo + 1) / width)
    edges = lo - 0.5 + width * np.arange(n + 1)
    counts, _ = np.histogram(x, bins=edges)
    return edges, counts


def is_unimodal(counts, tol_sigma: float = 3.0) -> bool:
    """Whether counts rise to a single peak and fall after it.

    A dip counts against unimodality only when it is larger than
    ``tol_sigma`` Poisson standard deviations, so sampling noise in sparse
    tail bins is tolerated.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.size == 0:
        return False
    mode = int(np.argmax(c))

    def monotone(seq) -> bool:
        # seq runs from the mode outward; every bin must not exceed any bin closer to the mode
        lowest = seq[0]
        for v in seq[1:]:
            if v - lowest > tol_sigma * math.sqrt(v + lowest + 1.0):
                return False
            lowest = min(lowest, v)
        return True

    return monotone(c[mode::-1]) and monotone(c[mode:])
