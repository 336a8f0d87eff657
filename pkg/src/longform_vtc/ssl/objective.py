"""Span masking and the masked cluster-prediction loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class MaskSpec:
    mask: np.ndarray
    spans: List[Tuple[int, int]]

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


def mask_spans(n_frames: int, mask_prob: float, mask_len: int,
               seed: Union[int, np.random.Generator, None] = None) -> MaskSpec:
    """Every frame independently starts a span of ``mask_len`` frames with
    probability ``mask_prob``; spans are truncated at the sequence end."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    starts = np.flatnonzero(rng.random(n_frames) < mask_prob)
    mask = np.zeros(n_frames, dtype=bool)
    spans = []
    for s in starts:
        e = min(n_frames, int(s) + mask_len)
        mask[s:e] = True
        spans.append((int(s), e))
    return MaskSpec(mask, spans)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_targets(targets, K):
    if targets.size and (targets.max() >= K or targets.min() < 0):
        raise ValueError(f"target cluster id out of range for K={K}")


def masked_prediction_loss(logits, targets, mask) -> float:
    """Mean cross-entropy over masked frames; 0 (with a warning) when none are masked."""
    return masked_prediction_loss_and_grad(logits, targets, mask)[0]


def masked_prediction_loss_and_grad(logits, targets, mask):
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    m = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    K = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape[:-1]}")
    _check_targets(targets, K)
    n = int(m.sum())
    grad = np.zeros_like(logits)
    if n == 0:
        logger.warning("masked_prediction_loss: no masked frames, loss set to 0")
        return 0.0, grad
    lp = _log_softmax(logits[m].astype(np.float64))
    t = targets[m]
    loss = -lp[np.arange(n), t].mean()
    g = np.exp(lp)
    g[np.arange(n), t] -= 1.0
    grad[m] = (g / n).astype(logits.dtype)
    return float(loss), grad
