"""Adam and learning-rate schedules over dicts of numpy parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np


class Adam:
    def __init__(self, params: Dict[str, np.ndarray], lr: float = 1e-3, betas=(0.9, 0.98), eps: float = 1e-8,
                 names: Optional[Iterable[str]] = None):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.names = list(params) if names is None else list(names)
        self.m = {k: np.zeros_like(params[k]) for k in self.names}
        self.v = {k: np.zeros_like(params[k]) for k in self.names}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: Optional[float] = None) -> None:
        """In-place update of ``params`` (only the names this optimizer owns)."""
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in self.names:
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            params[k] -= update.astype(params[k].dtype)


def warmup_linear(step: int, total_steps: int, peak_lr: float, warmup_frac: float = 0.08) -> float:
    """Linear warm-up to ``peak_lr`` over ``warmup_frac`` of training, then linear decay to 0.

    ``step`` is 0-based; the first update already uses a non-zero rate.
    """
    warmup = max(1, int(round(warmup_frac * total_steps)))
    s = step + 1
    if s <= warmup:
        return peak_lr * s / warmup
    return peak_lr * max(0.0, (total_steps - s + 1) / max(1, total_steps - warmup + 1))


@dataclass
class PlateauHalver:
    """Halve the rate once the monitored loss has failed to improve by
    ``min_delta`` for ``patience`` consecutive evaluations."""

    lr: float
    patience: int = 3
    factor: float = 0.5
    min_delta: float = 1e-4
    best: float = float("inf")
    bad_evals: int = 0

    def update(self, value: float) -> float:
        if value < self.best - self.min_delta:
            self.best = value
            self.bad_evals = 0
        else:
            self.bad_evals += 1
            if self.bad_evals >= self.patience:
                self.lr *= self.factor
                self.bad_evals = 0
        return self.lr


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))


def clip_grads(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm
