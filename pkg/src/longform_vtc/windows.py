"""Overlapping-window processing of whole recordings on the frame grid."""

from __future__ import annotations

from typing import List

import numpy as np

WINDOW_FRAMES = 200  # 4 s
STRIDE_FRAMES = 100  # 2 s


def window_starts(n_frames: int, window: int = WINDOW_FRAMES, stride: int = STRIDE_FRAMES) -> List[int]:
    if n_frames <= window:
        return [0]
    starts = list(range(0, n_frames - window + 1, stride))
    if starts[-1] + window < n_frames:
        starts.append(n_frames - window)
    return starts


def sliding_average(fn, features: np.ndarray, window: int = WINDOW_FRAMES, stride: int = STRIDE_FRAMES,
                    max_batch: int = 32) -> np.ndarray:
    """Apply ``fn`` (``(B, W, D) -> (B, W, C)``) on overlapping windows and average per frame.

    A sequence shorter than one window is processed as a single window of its
    own length, which is exactly equivalent to padding plus key masking.
    """
    n = features.shape[0]
    starts = window_starts(n, window, stride)
    width = min(window, n)
    total = None
    counts = np.zeros(n)
    for b in range(0, len(starts), max_batch):
        chunk = starts[b:b + max_batch]
        out = fn(np.stack([features[s:s + width] for s in chunk]))
        if total is None:
            total = np.zeros((n, out.shape[-1]))
        for s, o in zip(chunk, out):
            total[s:s + width] += o
            counts[s:s + width] += 1
    return total / counts[:, None]
