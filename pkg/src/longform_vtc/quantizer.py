"""k-means pseudo-labelling: fit a codebook on sampled frames, label every frame."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .features import FrameMatrix

LLOYD = "LLOYD"
MINIBATCH = "MINIBATCH"

_CHUNK = 4096


@dataclass
class Codebook:
    centroids: np.ndarray
    feature_origin: str = "MFCC"
    seed: Optional[int] = None
    inertia_history: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids)
        if self.centroids.ndim != 2:
            raise ValueError("centroids must be a K x dim matrix")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def save(self, path: Union[str, Path]) -> None:
        """``<path>`` holds float32 centroids; ``<path>.json`` the header."""
        path = Path(path)
        self.centroids.astype("<f4").tofile(path)
        header = {"K": self.K, "dim": self.dim, "feature_origin": self.feature_origin, "seed": self.seed}
        Path(str(path) + ".json").write_text(json.dumps(header) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Codebook":
        path = Path(path)
        header = json.loads(Path(str(path) + ".json").read_text())
        cents = np.fromfile(path, dtype="<f4").reshape(header["K"], header["dim"])
        return cls(cents, feature_origin=header["feature_origin"], seed=header["seed"])


def _as_array(data) -> np.ndarray:
    return data.data if isinstance(data, FrameMatrix) else np.asarray(data)


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # direct differences rather than the expanded dot-product form, so that
    # exact ties stay exact
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _nearest(x: np.ndarray, centroids: np.ndarray):
    labels = np.empty(x.shape[0], dtype=np.int64)
    dists = np.empty(x.shape[0], dtype=np.float64)
    step = max(1, _CHUNK * 32 // max(1, centroids.shape[0]))
    for start in range(0, x.shape[0], step):
        d = squared_distances(x[start:start + step], centroids)
        idx = np.argmin(d, axis=1)  # first minimum -> lowest index on ties
        labels[start:start + step] = idx
        dists[start:start + step] = d[np.arange(d.shape[0]), idx]
    return labels, dists


def assign(cb: Codebook, fm) -> np.ndarray:
    """Nearest centroid per frame (Euclidean, ties to the lowest index)."""
    x = _as_array(fm)
    if x.ndim != 2 or x.shape[1] != cb.dim:
        raise ValueError(f"feature dim {x.shape[-1]} does not match codebook dim {cb.dim}")
    return _nearest(x.astype(np.float64), cb.centroids.astype(np.float64))[0]


def inertia(x: np.ndarray, centroids: np.ndarray) -> float:
    return float(_nearest(x, centroids)[1].sum())


def kmeans_plusplus(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((K, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centers[k] = x[idx]
        closest = np.minimum(closest, ((x - centers[k]) ** 2).sum(axis=1))
    return centers


def _reseed_empty(x, centers, labels, dists, empty):
    # each empty cluster takes the currently worst-served point
    dists = dists.copy()
    for k in empty:
        far = int(np.argmax(dists))
        centers[k] = x[far]
        labels[far] = k
        dists[far] = 0.0
    return centers


def kmeans_fit(
    data,
    K: int,
    mode: str = MINIBATCH,
    seed: int = 0,
    max_iters: int = 50,
    batch_size: int = 1024,
    feature_origin: Optional[str] = None,
) -> Codebook:
    """Fit K centroids with k-means++ seeding.

    ``LLOYD`` runs full-batch iterations until assignments stop changing;
    ``MINIBATCH`` makes ``max_iters`` passes over shuffled batches with
    per-centre ``1/count`` learning rates.
    """
    x = _as_array(data).astype(np.float64)
    if feature_origin is None:
        feature_origin = data.origin if isinstance(data, FrameMatrix) else "UNKNOWN"
    if x.ndim != 2:
        raise ValueError("data must be n_frames x dim")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains NaN or infinite values")
    if K < 1 or x.shape[0] < K:
        raise ValueError(f"need n_frames >= K (got n_frames={x.shape[0]}, K={K})")
    rng = np.random.default_rng(seed)

    if K == 1:
        return Codebook(x.mean(axis=0, keepdims=True), feature_origin, seed, [inertia(x, x.mean(0, keepdims=True))])

    centers = kmeans_plusplus(x, K, rng)
    if mode == LLOYD:
        centers, history = _lloyd(x, centers, max_iters)
    elif mode == MINIBATCH:
        centers, history = _minibatch(x, centers, max_iters, batch_size, rng)
    else:
        raise ValueError(f"unknown k-means mode {mode!r}")
    return Codebook(centers, feature_origin, seed, history)


def _lloyd(x, centers, max_iters):
    labels, dists = _nearest(x, centers)
    history = [float(dists.sum())]
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=centers.shape[0])
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        empty = np.flatnonzero(~nz)
        if empty.size:
            new = _reseed_empty(x, new, labels, dists, empty)
        new_labels, dists = _nearest(x, new)
        history.append(float(dists.sum()))
        centers = new
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, history


def _minibatch(x, centers, epochs, batch_size, rng):
    n, K = x.shape[0], centers.shape[0]
    counts = np.zeros(K)
    history = [inertia(x, centers)]
    for _ in range(epochs):
        order = rng.permutation(n)
        seen = np.zeros(K, dtype=bool)
        for start in range(0, n, batch_size):
            batch = x[order[start:start + batch_size]]
            labels, dists = _nearest(batch, centers)
            bc = np.bincount(labels, minlength=K)
            sums = np.zeros_like(centers)
            np.add.at(sums, labels, batch)
            hit = bc > 0
            seen |= hit
            counts[hit] += bc[hit]
            # equals the sequential per-sample update c += (x - c) / count
            centers[hit] += (sums[hit] - bc[hit, None] * centers[hit]) / counts[hit, None]
        empty = np.flatnonzero(~seen)
        if empty.size:
            labels, dists = _nearest(x, centers)
            centers = _reseed_empty(x, centers, labels, dists, empty)
            counts[empty] = 1.0
        history.append(inertia(x, centers))
    return centers, history


def sample_features(files: Sequence, budget: int, seed: int = 0, origin: Optional[str] = None) -> FrameMatrix:
    """Uniform without-replacement frame sample pooled across files."""
    arrays = [_as_array(f) for f in files]
    if origin is None:
        origin = files[0].origin if files and isinstance(files[0], FrameMatrix) else "UNKNOWN"
    sizes = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    total = int(sizes.sum())
    if budget > total:
        raise ValueError(f"budget {budget} exceeds the {total} available frames")
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=budget, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    file_idx = np.searchsorted(offsets, picks, side="right") - 1
    rows = [arrays[f][p - offsets[f]] for f, p in zip(file_idx, picks)]
    data = np.stack(rows) if rows else np.zeros((0, arrays[0].shape[1]))
    return FrameMatrix(data, origin=origin)


def cluster_purity(labels: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of frames whose cluster's majority true class matches their own."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    total = 0
    for k in np.unique(labels):
        _, counts = np.unique(truth[labels == k], return_counts=True)
        total += counts.max()
    return total / labels.shape[0]


def save_labels(labels: np.ndarray, path: Union[str, Path], K: int) -> None:
    path = Path(path)
    np.asarray(labels).astype("<i4").tofile(path)
    Path(str(path) + ".json").write_text(json.dumps({"n_frames": int(len(labels)), "K": int(K)}) + "\n")


def load_labels(path: Union[str, Path]) -> np.ndarray:
    return np.fromfile(Path(path), dtype="<i4").astype(np.int64)
