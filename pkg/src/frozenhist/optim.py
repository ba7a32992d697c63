"""AdamW with decoupled weight decay, and global gradient-norm clipping."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class AdamW:
    """Decoupled-weight-decay Adam (Loshchilov & Hutter).

    Update per step t, per parameter p with gradient g:

        m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
        p <- p - lr (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps) - lr wd p

    Defaults follow the cited formulation: betas (0.9, 0.999), eps 1e-8,
    weight decay 0.01.
    """

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """Apply one update from the accumulated ``grad`` of each parameter."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient for parameter {p.name or '<unnamed>'}"
                )
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale a gradient list so its global L2 norm is at most ``max_norm``.

    Returns (scaled grads, pre-clip global norm).  Gradients at or under the
    limit pass through unchanged.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g) ** 2))
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [np.asarray(g) * scale for g in grads], norm


def clip_grad_norm_(params: list[Tensor], max_norm: float) -> float:
    """In-place variant over parameter ``grad`` slots; returns pre-clip norm."""
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    scaled, norm = clip_grad_norm(grads, max_norm)
    for p, g in zip(params, scaled):
        p.grad = g
    return norm
