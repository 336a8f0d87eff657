"""Two-iteration bootstrap: teacher clusters -> encoder 1 -> layer clusters -> encoder 2."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..features import NormStats, normalize
from ..quantizer import MINIBATCH, Codebook, assign, cluster_purity, kmeans_fit, sample_features
from ..windows import STRIDE_FRAMES, WINDOW_FRAMES
from .encoder import EncoderConfig, EncoderState, extract_layer_features
from .train import CurvePoint, PretrainSettings, Utterance, train_pretrain_iteration

logger = logging.getLogger(__name__)


@dataclass
class PretrainRecording:
    """One recording prepared for pre-training (all arrays on the 50 Hz grid)."""

    recording_id: str
    inputs: np.ndarray  # normalised encoder input, (T, input_dim)
    teacher: np.ndarray  # normalised iteration-1 teacher features, (T, teacher_dim)
    segments: List[Tuple[int, int]]  # frame ranges of pre-training segments
    truth: Optional[np.ndarray] = None  # per-frame class ids, for purity reports


@dataclass
class DriverSettings:
    iterations: int = 2
    n_clusters: int = 32
    kmeans_mode: str = MINIBATCH
    kmeans_budget: int = 20000
    kmeans_iters: int = 50
    kmeans_batch: int = 1024
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)

    @classmethod
    def from_dict(cls, d: dict) -> "DriverSettings":
        d = dict(d)
        pre = PretrainSettings.from_dict(d.pop("pretrain", {}))
        return cls(pretrain=pre, **{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class IterationResult:
    iteration: int
    state: EncoderState
    codebook: Codebook
    curve: List[CurvePoint]
    purity: Optional[float] = None

    def report(self) -> dict:
        return {
            "iteration": self.iteration,
            "feature_origin": self.codebook.feature_origin,
            "K": self.codebook.K,
            "initial_loss": self.curve[0].loss if self.curve else None,
            "final_loss": float(np.mean([c.loss for c in self.curve[-20:]])) if self.curve else None,
            "cluster_purity": self.purity,
        }


def _segment_frames(recs: Sequence[PretrainRecording], arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    out = []
    for rec, arr in zip(recs, arrays):
        for a, b in rec.segments:
            if b > a:
                out.append(arr[a:b])
    return out


def run_iteration(
    iteration: int,
    recs: Sequence[PretrainRecording],
    teacher: Sequence[np.ndarray],
    origin: str,
    config: EncoderConfig,
    settings: DriverSettings,
    seed: int,
) -> IterationResult:
    """Cluster ``teacher`` frames, label every recording and train a fresh encoder."""
    pool = _segment_frames(recs, teacher)
    total = sum(len(p) for p in pool)
    budget = min(settings.kmeans_budget, total)
    sample = sample_features(pool, budget, seed=seed, origin=origin)
    codebook = kmeans_fit(sample, settings.n_clusters, settings.kmeans_mode, seed=seed,
                          max_iters=settings.kmeans_iters, batch_size=settings.kmeans_batch)
    utterances, labels_all, truth_all = [], [], []
    for rec, feats in zip(recs, teacher):
        labels = assign(codebook, feats)
        for a, b in rec.segments:
            if b > a:
                utterances.append(Utterance(rec.inputs[a:b], labels[a:b]))
                if rec.truth is not None:
                    labels_all.append(labels[a:b])
                    truth_all.append(rec.truth[a:b])
    purity = None
    if truth_all:
        purity = cluster_purity(np.concatenate(labels_all), np.concatenate(truth_all))
    cfg = config.replace(n_clusters=codebook.K)
    state, curve = train_pretrain_iteration(utterances, cfg, settings.pretrain, seed=seed)
    logger.info("iteration %d: loss %.3f -> %.3f, purity %s", iteration, curve[0].loss if curve else float("nan"),
                curve[-1].loss if curve else float("nan"), purity)
    return IterationResult(iteration, state, codebook, curve, purity)


def layer_teacher(state: EncoderState, recs: Sequence[PretrainRecording], layer: Optional[int] = None):
    """Normalised tapped-layer activations for every recording, stats from segment frames."""
    feats = [extract_layer_features(state, r.inputs, layer, window=WINDOW_FRAMES, stride=STRIDE_FRAMES).data
             for r in recs]
    stats = NormStats.fit(_segment_frames(recs, feats))
    return [normalize(f, stats) for f in feats]


def two_iteration_driver(
    recs: Sequence[PretrainRecording],
    config: EncoderConfig,
    seed: int = 0,
    settings: Optional[DriverSettings] = None,
) -> List[IterationResult]:
    """Iteration 1 clusters the MFCC teacher; iteration 2 clusters the tapped layer
    of encoder 1 (fresh k-means seed) and trains a new encoder from scratch."""
    settings = settings or DriverSettings()
    results = [run_iteration(1, recs, [r.teacher for r in recs], "MFCC", config, settings, seed)]
    if settings.iterations >= 2:
        first = results[0].state
        teacher = layer_teacher(first, recs)
        origin = f"ENCODER_LAYER({first.config.layer_tap})"
        results.append(run_iteration(2, recs, teacher, origin, config, settings, seed + 1))
    return results
