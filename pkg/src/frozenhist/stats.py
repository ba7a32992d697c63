"""Evaluation statistics for multi-seed learning curves.

Aggregation follows the robust-evaluation playbook: per-seed scores are the
mean return over the last 100 episodes, summarized across seeds by the
interquartile mean (IQM) with a seeded percentile-bootstrap confidence
interval, and compared between methods with a one-sided rank-sum test.

The rank-sum test uses mid-ranks for ties.  For combined sample sizes up to
20 the p-value is exact -- the strictly-greater tail mass P(W > W_observed)
of the permutation distribution, computed by dynamic programming over
integer-doubled ranks -- otherwise a normal approximation with tie-corrected
variance and continuity correction.  When every value in both samples is
identical the test is vacuous and returns 0.5 by convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng, split_seed

EXACT_LIMIT = 20  # combined sample size up to which the rank-sum test is exact


@dataclass
class RunRecord:
    """One seed's learning curve: rows of (env step, episode, return, length)."""

    seed: int
    rows: list[tuple[int, int, float, int]]
    method: str = ""

    def returns(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows], dtype=np.float64)


def final_score(record: RunRecord, last: int = 100) -> float:
    """Mean return over the trailing ``last`` episodes (all, if fewer)."""
    rets = record.returns()
    if rets.size == 0:
        raise ValueError(f"run for seed {record.seed} finished no episodes")
    return float(rets[-last:].mean())


def iqm(values) -> float:
    """Mean of the middle 50% of the sorted values.

    When the count is not divisible by four the boundary order statistics
    enter with fractional weight (each order statistic occupies a unit
    interval; the window [n/4, 3n/4] clips those intervals linearly).
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.size
    if n == 0:
        raise ValueError("iqm of an empty sample is undefined")
    lo, hi = n / 4.0, 3.0 * n / 4.0
    starts = np.arange(n, dtype=np.float64)
    weights = np.clip(np.minimum(starts + 1.0, hi) - np.maximum(starts, lo), 0.0, 1.0)
    return float((weights * v).sum() / weights.sum())


def bootstrap_ci(values, resamples: int = 2000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Seeded percentile bootstrap of the IQM."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("bootstrap needs at least two values")
    rng = Rng(split_seed(seed, "bootstrap"))
    stats = np.empty(resamples)
    for i in range(resamples):
        idx = rng.integers(0, v.size, v.size)
        stats[i] = iqm(v[idx])
    stats.sort()
    alpha = (1.0 - level) / 2.0

    def quantile(q: float) -> float:
        pos = q * (resamples - 1)
        lo_i = int(np.floor(pos))
        hi_i = min(lo_i + 1, resamples - 1)
        frac = pos - lo_i
        return float(stats[lo_i] * (1.0 - frac) + stats[hi_i] * frac)

    return quantile(alpha), quantile(1.0 - alpha)


def _midranks_doubled(combined: np.ndarray) -> np.ndarray:
    """Mid-ranks of the combined sample, times two (always integers)."""
    order = np.argsort(combined, kind="stable")
    ranks2 = np.empty(len(combined), dtype=np.int64)
    i = 0
    while i < len(combined):
        j = i
        while j + 1 < len(combined) and combined[order[j + 1]] == combined[order[i]]:
            j += 1
        # ranks i+1 .. j+1 share the mid-rank; doubled it is (i + j + 2)
        ranks2[order[i : j + 1]] = i + j + 2
        i = j + 1
    return ranks2


def _exact_tail_greater(ranks2: np.ndarray, n1: int, w2_obs: int) -> float:
    """P(W > W_obs) over all C(N, n1) rank assignments, by integer DP."""
    total = ranks2.sum()
    # dp[j][s] = number of ways to pick j ranks summing to s (doubled units)
    dp = np.zeros((n1 + 1, total + 1), dtype=np.float64)
    dp[0, 0] = 1.0
    for r in ranks2:
        for j in range(min(n1, 1_000_000), 0, -1):
            dp[j, r:] += dp[j - 1, : total + 1 - r]
    counts = dp[n1]
    n_total = counts.sum()
    greater = counts[w2_obs + 1 :].sum()
    return float(greater / n_total)


def wilcoxon_rank_sum_one_sided(xs, ys) -> float:
    """P-value for the alternative "xs stochastically greater than ys".

    Exact strictly-greater tail for combined n <= 20; otherwise a normal
    approximation with tie-corrected variance and a +0.5 continuity
    correction aligned with the strict tail.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    combined = np.concatenate([x, y])
    if np.all(combined == combined[0]):
        return 0.5  # every observation tied; the test carries no information
    ranks2 = _midranks_doubled(combined)
    w2 = int(ranks2[: x.size].sum())
    n1, n2 = x.size, y.size
    n = n1 + n2
    if n <= EXACT_LIMIT:
        return _exact_tail_greater(ranks2, n1, w2)
    mean_w2 = n1 * (n + 1)  # doubled units
    # tie correction on doubled ranks: sum of (t^3 - t) per tie group
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts)).sum())
    var_w = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    sigma2 = 2.0 * math.sqrt(var_w)  # doubled units
    z = (w2 + 1.0 - mean_w2) / sigma2  # +0.5 in plain units
    return float(1.0 - 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))


@dataclass(frozen=True)
class NormalizationRange:
    r_min: float
    r_max: float

    def __post_init__(self):
        if not self.r_max > self.r_min:
            raise ValueError(f"degenerate range [{self.r_min}, {self.r_max}]")


def normalized_return(r: float, bounds: NormalizationRange) -> float:
    """(r - R_min) / (R_max - R_min); below-floor scores come out negative."""
    return (r - bounds.r_min) / (bounds.r_max - bounds.r_min)


@dataclass
class MethodSummary:
    method: str
    env: str
    iqm: float
    ci_lo: float
    ci_hi: float
    n_seeds: int


def summarize_methods(scores_by_method: dict[tuple[str, str], list[float]],
                      seed: int = 0) -> tuple[list[MethodSummary], list[tuple[str, str, float]]]:
    """Aggregate per-seed scores into summary rows and pairwise p-values.

    ``scores_by_method`` maps (method, env) to the per-seed final scores.
    Pairwise rows compare methods within the same env, both directions.
    """
    summaries = []
    for (method, env), scores in sorted(scores_by_method.items()):
        point = iqm(scores)
        if len(scores) >= 2:
            lo, hi = bootstrap_ci(scores, seed=seed)
        else:
            lo = hi = point
        summaries.append(MethodSummary(method, env, point, lo, hi, len(scores)))
    pairwise = []
    keys = sorted(scores_by_method)
    for a in keys:
        for b in keys:
            if a == b or a[1] != b[1]:
                continue
            p = wilcoxon_rank_sum_one_sided(scores_by_method[a], scores_by_method[b])
            pairwise.append((a[0], b[0], p))
    return summaries, pairwise
