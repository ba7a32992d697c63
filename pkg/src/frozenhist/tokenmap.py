"""Mapping observations into token-embedding space without training.

A fixed random matrix P projects a flattened observation o in R^n to a query
P o in R^m; one softmax retrieval over the token-embedding rows E then
produces

    x^T = softmax(beta o^T P^T E^T) E,

a point in the convex hull of the embeddings.  P carries the
norm-preserving random-projection scaling: it is distributed like
sqrt(n/m) times the first m coordinates of a random rotation, i.e. entries
i.i.d. N(0, 1/m), so that E||P d||^2 = ||d||^2 and for any difference d of
two observations

    (1 - eps) ||d||^2 <= ||P d||^2 <= (1 + eps) ||d||^2

fails with probability at most delta = 2 exp(-m (eps^2/2 - eps^3/3) / 2).
This module owns the projection sampling, the embedding op, and the
diagnostics (distortion statistics, distance matrices, nearest-token
annotation) used to inspect the mapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng, split_seed

# ITU-R BT.601 luma weights for RGB-to-gray conversion
_LUMA = np.array([0.299, 0.587, 0.114])

# integer grid observations are scaled by the largest cell code on flattening
GRID_CODE_SCALE = 8.0


@dataclass(frozen=True)
class RandomProjection:
    """Frozen m x n Gaussian projection, reproducible from its seed."""

    matrix: np.ndarray
    seed: int

    @property
    def obs_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.matrix.shape[0]


def sample_projection(obs_dim: int, embed_dim: int, seed: int) -> RandomProjection:
    """Draw P with entries N(0, 1/embed_dim), row-major from the seed.

    This is the distance-preserving scaling (E||P d||^2 = ||d||^2); it equals
    sqrt(obs_dim/embed_dim) times a coordinate projection of a random
    rotation in distribution.
    """
    if obs_dim < 1 or embed_dim < 1:
        raise ValueError(f"dimensions must be positive, got ({obs_dim}, {embed_dim})")
    rng = Rng(split_seed(seed, "projection"))
    std = np.sqrt(1.0 / embed_dim)
    matrix = rng.normal(embed_dim * obs_dim).reshape(embed_dim, obs_dim) * std
    return RandomProjection(matrix=matrix, seed=seed)


@dataclass(frozen=True)
class TokenSpaceMap:
    """Embeddings (k, m), projection (m, n), and softmax sharpness beta."""

    embeddings: np.ndarray
    projection: RandomProjection
    beta: float

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be (k, m), got {self.embeddings.shape}")
        if self.embeddings.shape[1] != self.projection.embed_dim:
            raise ValueError(
                f"embedding dim {self.embeddings.shape[1]} != projection rows "
                f"{self.projection.embed_dim}"
            )
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def obs_dim(self) -> int:
        return self.projection.obs_dim

    @property
    def embed_dim(self) -> int:
        return self.projection.embed_dim


def flatten_observation(obs: np.ndarray) -> np.ndarray:
    """Flatten an observation to the projection's input vector.

    Integer grids are scaled to [0, 1] by the largest cell code; RGB arrays
    (H, W, 3) are first converted to gray with the 0.299/0.587/0.114 luma
    weights.  Float inputs are assumed pre-scaled and only flattened.
    """
    a = np.asarray(obs)
    if a.ndim == 3 and a.shape[-1] == 3:
        a = a @ _LUMA
    if np.issubdtype(a.dtype, np.integer):
        return a.reshape(-1).astype(np.float64) / GRID_CODE_SCALE
    return a.reshape(-1).astype(np.float64)


def _as_batch(o: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    o = np.asarray(o, dtype=np.float64)
    if o.ndim == 1:
        if o.shape[0] != n:
            raise ValueError(f"observation dim {o.shape[0]} != projection input dim {n}")
        return o[None, :], True
    if o.ndim != 2 or o.shape[1] != n:
        raise ValueError(f"observation batch shape {o.shape} incompatible with input dim {n}")
    return o, False


def embed_weights(mapping: TokenSpaceMap, o: np.ndarray) -> np.ndarray:
    """Softmax weights over the token embeddings for each observation row."""
    batch, single = _as_batch(o, mapping.obs_dim)
    scores = mapping.beta * (batch @ mapping.projection.matrix.T) @ mapping.embeddings.T
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def embed(mapping: TokenSpaceMap, o: np.ndarray) -> np.ndarray:
    """Token-space vector(s) for observation(s) o: softmax-weighted embeddings."""
    w = embed_weights(mapping, o)
    return w @ mapping.embeddings


def embed_graph(projection, embeddings, beta: float, o: np.ndarray):
    """Differentiable twin of :func:`embed` over autodiff tensors.

    ``projection`` (m, n) and ``embeddings`` (k, m) may be trainable
    parameters; this is the hook for the ablations that learn the projection
    or the input map instead of freezing them.  The default agents never put
    these tensors in an optimizer.
    """
    from . import autodiff as ad

    batch = ad.Tensor(np.atleast_2d(np.asarray(o, dtype=np.float64)))
    queries = ad.matmul(batch, ad.transpose(projection, (1, 0)))
    scores = ad.mul(ad.matmul(queries, ad.transpose(embeddings, (1, 0))), beta)
    return ad.matmul(ad.softmax(scores), embeddings)


def nearest_token(mapping: TokenSpaceMap, o: np.ndarray) -> int | np.ndarray:
    """Index of the embedding with the largest dot product against P o.

    Ties resolve to the lowest index.  This is the sharp-softmax limit of
    :func:`embed`.
    """
    batch, single = _as_batch(o, mapping.obs_dim)
    scores = (batch @ mapping.projection.matrix.T) @ mapping.embeddings.T
    idx = np.argmax(scores, axis=1)
    return int(idx[0]) if single else idx


def jl_failure_prob(embed_dim: int, eps: float) -> float:
    """Probability bound for one pairwise distance escaping [1-eps, 1+eps]."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    return float(2.0 * np.exp(-embed_dim * (eps**2 / 2.0 - eps**3 / 3.0) / 2.0))


@dataclass(frozen=True)
class DistortionReport:
    """Empirical distance-preservation statistics for a projection."""

    eps: float
    embed_dim: int
    theoretical_failure_prob: float
    violation_fraction: float
    pair_count: int
    mean_ratio: float


def distortion_stats(projection: RandomProjection, obs_a: np.ndarray,
                     obs_b: np.ndarray, eps: float) -> DistortionReport:
    """Measure ||P d||^2 / ||d||^2 over observation pairs d = a - b.

    Zero-difference pairs are excluded (the ratio is undefined for them).
    """
    a = np.asarray(obs_a, dtype=np.float64)
    b = np.asarray(obs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"need matching (pairs, n) arrays, got {a.shape} and {b.shape}")
    d = a - b
    norms = np.einsum("ij,ij->i", d, d)
    keep = norms > 0
    if not np.any(keep):
        raise ValueError("all observation pairs are identical; no distortion to measure")
    d = d[keep]
    proj = d @ projection.matrix.T
    ratios = np.einsum("ij,ij->i", proj, proj) / norms[keep]
    violations = (ratios < 1.0 - eps) | (ratios > 1.0 + eps)
    return DistortionReport(
        eps=float(eps),
        embed_dim=projection.embed_dim,
        theoretical_failure_prob=jl_failure_prob(projection.embed_dim, eps),
        violation_fraction=float(violations.mean()),
        pair_count=int(ratios.size),
        mean_ratio=float(ratios.mean()),
    )


def distance_matrices(observations: np.ndarray, mapping: TokenSpaceMap,
                      betas: list[float]) -> tuple[np.ndarray, dict[float, np.ndarray]]:
    """Pairwise Euclidean distances before and after the token-space mapping.

    Returns (observation-space matrix, {beta: embedded-space matrix}); all
    matrices are symmetric with a zero diagonal.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 2:
        raise ValueError(f"need at least two flattened observations, got shape {obs.shape}")

    def pairwise(x: np.ndarray) -> np.ndarray:
        sq = np.einsum("ij,ij->i", x, x)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        np.maximum(d2, 0.0, out=d2)
        d = np.sqrt(d2)
        np.fill_diagonal(d, 0.0)
        return (d + d.T) / 2.0

    before = pairwise(obs)
    after: dict[float, np.ndarray] = {}
    for beta in betas:
        m = TokenSpaceMap(mapping.embeddings, mapping.projection, float(beta))
        after[float(beta)] = pairwise(embed(m, obs))
    return before, after
