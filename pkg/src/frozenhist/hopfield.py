"""Continuous associative memory with softmax retrieval.

A store holds k patterns e_1..e_k (rows of E, dimension m) and an inverse
temperature beta.  One retrieval update maps a query xi to

    f(xi) = E^T softmax(beta E xi),

which always lands in the convex hull of the stored patterns and never
increases the energy

    L(xi) = -beta^-1 log sum_i exp(beta e_i^T xi)
            + beta^-1 log k + (1/2) xi^T xi + (1/2) M^2,

where M is the largest pattern norm.  The module also evaluates the
separation diagnostics and the retrieval-error and storage-capacity bounds
that govern when one update suffices, including the Lambert-W evaluation the
capacity bound needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_INV_E = float(np.exp(-1.0))


@dataclass(frozen=True)
class PatternStore:
    """Immutable pattern matrix (k, m) with cached max row norm."""

    patterns: np.ndarray
    beta: float
    max_norm: float

    @classmethod
    def create(cls, patterns: np.ndarray, beta: float) -> "PatternStore":
        e = np.ascontiguousarray(patterns, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError(f"pattern matrix must be (k, m) with k >= 1, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("pattern matrix contains non-finite entries")
        if beta <= 0:
            raise ValueError(f"beta must be positive, got {beta}")
        return cls(e, float(beta), float(np.linalg.norm(e, axis=1).max()))

    @property
    def count(self) -> int:
        return self.patterns.shape[0]

    @property
    def dim(self) -> int:
        return self.patterns.shape[1]


@dataclass(frozen=True)
class RetrievalReport:
    retrieved: np.ndarray
    weights: np.ndarray
    energy_before: float
    energy_after: float
    top_index: int


def _check_query(store: PatternStore, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (store.dim,):
        raise ValueError(f"query shape {xi.shape} does not match pattern dimension ({store.dim},)")
    return xi


def softmax_weights(store: PatternStore, xi: np.ndarray) -> np.ndarray:
    """softmax(beta E xi), stabilized by subtracting the max score."""
    s = store.beta * (store.patterns @ xi)
    s -= s.max()
    w = np.exp(s)
    return w / w.sum()


def retrieve(store: PatternStore, xi) -> RetrievalReport:
    """One retrieval update from query xi."""
    xi = _check_query(store, xi)
    w = softmax_weights(store, xi)
    new = store.patterns.T @ w
    # argmax returns the first (lowest) index on ties
    return RetrievalReport(
        retrieved=new,
        weights=w,
        energy_before=energy(store, xi),
        energy_after=energy(store, new),
        top_index=int(np.argmax(w)),
    )


def energy(store: PatternStore, xi) -> float:
    xi = _check_query(store, xi)
    s = store.beta * (store.patterns @ xi)
    smax = s.max()
    lse = smax + np.log(np.exp(s - smax).sum())
    k = store.count
    return float(
        -lse / store.beta
        + np.log(k) / store.beta
        + 0.5 * xi @ xi
        + 0.5 * store.max_norm**2
    )


def separation(store: PatternStore, i: int) -> float:
    """Minimal dot-product margin of pattern i over all other patterns."""
    k = store.count
    if k < 2:
        raise ValueError("separation is undefined for a single stored pattern")
    if not 0 <= i < k:
        raise IndexError(f"pattern index {i} out of range for k={k}")
    e_i = store.patterns[i]
    dots = store.patterns @ e_i
    self_dot = dots[i]
    others = np.delete(dots, i)
    return float(self_dot - others.max())


def separation_threshold(store: PatternStore) -> float:
    """Margin required for a pattern to count as well separated."""
    k, beta, big_m = store.count, store.beta, store.max_norm
    return 2.0 / (beta * k) + np.log(2.0 * (k - 1) * k * beta * big_m**2) / beta


def well_separated(store: PatternStore, i: int) -> bool:
    if store.count < 2:
        raise ValueError("well_separated needs at least two stored patterns")
    return separation(store, i) >= separation_threshold(store)


def fixed_point_distance_bound(store: PatternStore, i: int, max_iter: int = 200,
                               tol: float = 1e-15) -> float:
    """Self-consistent upper bound on the distance from pattern i to the
    fixed point it attracts.

    Iterates d <- 2 (k-1) M exp(-beta (Delta_i - 2 d M)); the map is
    increasing, so iterating from d = map(0) climbs monotonically to the
    smallest fixed point when one exists.  Returns inf when the iteration
    fails to settle (pattern not sufficiently separated).
    """
    k, beta, big_m = store.count, store.beta, store.max_norm
    delta = separation(store, i)
    base = 2.0 * (k - 1) * big_m

    def step(d: float) -> float:
        return base * np.exp(-beta * (delta - 2.0 * d * big_m))

    d = step(0.0)
    for _ in range(max_iter):
        nxt = step(d)
        if not np.isfinite(nxt) or nxt > 1e6:
            return float("inf")
        if abs(nxt - d) < tol:
            return float(nxt)
        d = nxt
    return float("inf")


def retrieval_error_bound(store: PatternStore, xi, i: int,
                          xi_star_dist: float | None = None) -> tuple[float, float]:
    """Bounds for one retrieval update aimed at pattern i.

    Returns (one_update_bound, error_bound):

      error_bound      >= || f(xi) - e_i ||
      one_update_bound >= || f(xi) - fixed point ||,
                       the Jacobian-norm factor
                       2 beta k M^2 (k-1) exp(-beta (Delta_i - 2 max{.} M))
                       times an upper bound on || xi - fixed point ||.

    ``xi_star_dist`` is an upper bound on the distance from e_i to its fixed
    point; when omitted it is filled in by the self-consistent estimate from
    :func:`fixed_point_distance_bound`.  Both bounds may exceed any norm in
    degenerate regimes; they are still valid upper bounds.
    """
    xi = _check_query(store, xi)
    k, beta, big_m = store.count, store.beta, store.max_norm
    delta = separation(store, i)
    if xi_star_dist is None:
        xi_star_dist = fixed_point_distance_bound(store, i)
    query_dist = float(np.linalg.norm(xi - store.patterns[i]))
    radius = max(query_dist, xi_star_dist)
    decay = np.exp(-beta * (delta - 2.0 * radius * big_m))
    error_bound = 2.0 * (k - 1) * decay * big_m
    jac_norm = 2.0 * beta * k * big_m**2 * (k - 1) * decay
    # || xi - fixed point || <= || xi - e_i || + || e_i - fixed point ||
    one_update_bound = jac_norm * (query_dist + xi_star_dist)
    return float(one_update_bound), float(error_bound)


def lambert_w0(x) -> np.longdouble:
    """Principal branch of the Lambert W function via Halley iteration.

    Defined for x >= -1/e; returns w >= -1 with w e^w = x.  The iteration
    runs in extended precision (x86 80-bit long double) so the residual
    |w e^w - x| stays below 1e-12 across x in [1e-6, 1e6]; in plain float64
    the representable spacing of w near x = 1e6 already forces residuals of
    about 1e-9.  Initial guess: log1p(x) for x >= 0; for negative arguments
    the series start x, or -1 + sqrt(2 (1 + e x)) near the branch point.
    """
    xl = np.longdouble(x)
    if xl < -np.longdouble(_INV_E):
        # tolerate representation error right at the branch point
        if xl < -np.longdouble(_INV_E) - np.longdouble(1e-15):
            raise ValueError(f"lambert_w0: argument {x} below -1/e")
        xl = -np.longdouble(_INV_E)
    if xl >= 0:
        w = np.log1p(xl)
    elif xl > -0.25:
        w = xl
    else:
        w = np.longdouble(-1.0) + np.sqrt(np.longdouble(2.0) * (1.0 + np.e * xl))
    for _ in range(50):
        ew = np.exp(w)
        f = w * ew - xl
        if f == 0:
            break
        fp = ew * (w + 1.0)
        fpp = ew * (w + 2.0)
        denom = fp - f * fpp / (2.0 * fp)
        step = f / denom
        w = w - step
        if abs(step) <= np.abs(w) * np.longdouble(1e-19) + np.longdouble(1e-30):
            break
    return w


@dataclass(frozen=True)
class CapacityBound:
    """Inputs, intermediates, and result of the storage-capacity bound."""

    beta: float
    pattern_norm_scale: float  # K; patterns live on the sphere of radius K sqrt(m-1)
    dim: int                   # m
    failure_prob: float        # p
    a: float
    b: float
    c: float
    min_patterns: float        # sqrt(p) * c^((m-1)/4)
    feasible: bool             # c >= (2 / sqrt(p))^(4 / (m-1))


def capacity_bound(beta: float, pattern_norm_scale: float, dim: int,
                   failure_prob: float) -> CapacityBound:
    """Exponential storage-capacity bound for random patterns on the sphere.

    With a = (2/(m-1)) (1 + ln(2 beta K^2 p (m-1))), b = 2 K^2 beta / 5 and
    c = b / W0(exp(a + ln b)), at least sqrt(p) c^((m-1)/4) random patterns
    are stored with probability 1 - p, provided c >= (2/sqrt(p))^(4/(m-1)).
    """
    if not 0 < failure_prob <= 1:
        raise ValueError(f"failure_prob must be in (0, 1], got {failure_prob}")
    if dim < 2:
        raise ValueError(f"dim must be at least 2, got {dim}")
    if beta <= 0 or pattern_norm_scale <= 0:
        raise ValueError("beta and pattern_norm_scale must be positive")
    m = dim
    k2 = pattern_norm_scale**2
    a = (2.0 / (m - 1)) * (1.0 + np.log(2.0 * beta * k2 * failure_prob * (m - 1)))
    b = 2.0 * k2 * beta / 5.0
    arg = np.exp(np.longdouble(a) + np.log(np.longdouble(b)))
    c = float(np.longdouble(b) / lambert_w0(arg))
    min_patterns = float(np.sqrt(failure_prob) * c ** ((m - 1) / 4.0))
    feasible = c >= (2.0 / np.sqrt(failure_prob)) ** (4.0 / (m - 1))
    return CapacityBound(
        beta=float(beta),
        pattern_norm_scale=float(pattern_norm_scale),
        dim=int(dim),
        failure_prob=float(failure_prob),
        a=float(a),
        b=float(b),
        c=c,
        min_patterns=min_patterns,
        feasible=bool(feasible),
    )
