"""End-to-end desk recipe: synth -> preprocess -> features -> 2x pre-train -> fine-tune -> eval."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import features as feat
from .corpus import CorpusManifest, child_disjoint_split, write_rttm
from .metrics import EvalReport, evaluate_corpus
from .segmenter import preprocess_pipeline
from .ssl.driver import DriverSettings, IterationResult, PretrainRecording, two_iteration_driver
from .ssl.encoder import EncoderConfig, EncoderState
from .synth import SynthSpec, frame_classes, generate_corpus, read_wav
from .timeline import Timeline
from .vtc import (FROZEN, FULL, FinetuneResult, FinetuneSettings, HeadParams, LabeledRecording, decode_timeline,
                  finetune, infer_frames, init_heads, rasterize)

logger = logging.getLogger(__name__)


@dataclass
class RecordingFeatures:
    logmel: np.ndarray
    mfcc: np.ndarray


def compute_features(samples: np.ndarray) -> RecordingFeatures:
    frames = feat.frame_signal(samples)
    lm = feat.log_mel(frames).data
    mf = np.concatenate([feat.cepstra(lm), feat.deltas(feat.cepstra(lm)), feat.deltas(feat.deltas(feat.cepstra(lm)))],
                        axis=1)
    return RecordingFeatures(lm.astype(np.float32), mf.astype(np.float32))


def load_corpus_audio(manifest: CorpusManifest, root) -> Dict[str, np.ndarray]:
    root = Path(root)
    return {r.id: read_wav(root / r.audio_path) for r in manifest.recordings}


def speech_segments(manifest: CorpusManifest, rec_id: str, vad: Optional[Timeline] = None) -> Timeline:
    """Pre-training segments of one recording; the VAD defaults to the pooled reference."""
    vad = manifest.timeline(rec_id) if vad is None else vad
    return preprocess_pipeline(vad, manifest.recording(rec_id))


def frame_ranges(tl: Timeline, n_frames: int) -> List[Tuple[int, int]]:
    out = []
    for s in tl.segments:
        a, b = feat.frame_span(s.onset, s.offset, n_frames)
        if b > a:
            out.append((a, b))
    return out


@dataclass
class PreparedCorpus:
    manifest: CorpusManifest
    features: Dict[str, RecordingFeatures]
    input_stats: feat.NormStats
    teacher_stats: feat.NormStats

    def inputs(self, rec_id: str) -> np.ndarray:
        return feat.normalize(self.features[rec_id].logmel, self.input_stats).astype(np.float32)

    def teacher(self, rec_id: str) -> np.ndarray:
        return feat.normalize(self.features[rec_id].mfcc, self.teacher_stats).astype(np.float32)

    def n_frames(self, rec_id: str) -> int:
        return self.features[rec_id].logmel.shape[0]

    def pretrain_recordings(self, rec_ids: Sequence[str], with_truth: bool = True) -> List[PretrainRecording]:
        out = []
        for rid in rec_ids:
            n = self.n_frames(rid)
            segs = frame_ranges(speech_segments(self.manifest, rid), n)
            truth = frame_classes(self.manifest, rid, n) if with_truth else None
            out.append(PretrainRecording(rid, self.inputs(rid), self.teacher(rid), segs, truth))
        return out

    def labeled(self, rec_ids: Sequence[str]) -> List[LabeledRecording]:
        return [LabeledRecording(self.inputs(r), rasterize(self.manifest.class_timelines(r), self.n_frames(r)), r)
                for r in rec_ids]


def prepare(manifest: CorpusManifest, audio: Dict[str, np.ndarray], train_ids: Sequence[str]) -> PreparedCorpus:
    feats = {rid: compute_features(audio[rid]) for rid in manifest.recording_ids}
    # normalisation statistics come from the training split only
    input_stats = feat.NormStats.fit([feats[r].logmel for r in train_ids])
    teacher_stats = feat.NormStats.fit([feats[r].mfcc for r in train_ids])
    return PreparedCorpus(manifest, feats, input_stats, teacher_stats)


def predict(state: EncoderState, heads: HeadParams, prepared: PreparedCorpus, rec_ids: Sequence[str],
            thresholds=0.5):
    entries = []
    for rid in rec_ids:
        scores = infer_frames(state, heads, prepared.inputs(rid))
        for vt, tl in decode_timeline(scores, thresholds, recording_id=rid).items():
            entries.extend((rid, vt, s) for s in tl.segments)
    return entries


@dataclass
class RecipeConfig:
    synth: SynthSpec = field(default_factory=lambda: SynthSpec(n_recordings=10, duration_each=180.0, seed=0))
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    driver: DriverSettings = field(default_factory=DriverSettings)
    # 1e-5 is far too slow for a few hundred desk steps on a small encoder
    finetune: FinetuneSettings = field(default_factory=lambda: FinetuneSettings(lr=1e-3, max_steps=300, eval_every=25))
    frozen_finetune: Optional[FinetuneSettings] = None
    modes: Tuple[str, ...] = (FROZEN, FULL)
    iteration_for_vtc: int = 2
    seed: int = 0


@dataclass
class RecipeResult:
    iterations: List[IterationResult]
    finetuned: Dict[str, FinetuneResult]
    reports: Dict[str, Dict[str, EvalReport]]
    val_reports: Dict[str, Dict[str, EvalReport]]
    splits: Dict[str, List[str]]
    timings: Dict[str, float]
    prepared: Optional[PreparedCorpus] = None

    def summary(self) -> dict:
        return {
            "splits": self.splits,
            "iterations": [it.report() for it in self.iterations],
            "test_macro_f": {m: r["global"].macro_f for m, r in self.reports.items()},
            "val_macro_f": {m: r["global"].macro_f for m, r in self.val_reports.items()},
            "test": {m: r["global"].to_dict() for m, r in self.reports.items()},
            "timings_s": self.timings,
        }


def run_recipe(cfg: RecipeConfig, out_dir: Optional[Path] = None) -> RecipeResult:
    timings = {}
    t0 = time.perf_counter()
    corpus = generate_corpus(cfg.synth, out_dir)
    manifest = corpus.manifest
    train_m, val_m, test_m = child_disjoint_split(manifest, seed=cfg.seed)
    splits = {"train": train_m.recording_ids, "val": val_m.recording_ids, "test": test_m.recording_ids}
    prepared = prepare(manifest, corpus.audio, splits["train"])
    timings["synth_features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    recs = prepared.pretrain_recordings(splits["train"])
    encoder_cfg = cfg.encoder.replace(input_dim=feat.N_MELS)
    iterations = two_iteration_driver(recs, encoder_cfg, seed=cfg.seed, settings=cfg.driver)
    timings["pretrain"] = time.perf_counter() - t0

    base = iterations[min(cfg.iteration_for_vtc, len(iterations)) - 1].state
    train_data = prepared.labeled(splits["train"])
    val_data = prepared.labeled(splits["val"])
    finetuned, reports, val_reports = {}, {}, {}
    for mode in cfg.modes:
        t0 = time.perf_counter()
        settings = cfg.frozen_finetune if (mode == FROZEN and cfg.frozen_finetune) else cfg.finetune
        heads = init_heads(base.config.d_model, seed=cfg.seed, dropout_prob=settings.dropout_prob, dtype=base.dtype)
        res = finetune(base, heads, train_data, val_data, mode, settings, seed=cfg.seed)
        finetuned[mode] = res
        hyp = predict(res.state, res.heads, prepared, splits["test"])
        reports[mode] = evaluate_corpus(test_m, hyp)
        val_reports[mode] = evaluate_corpus(val_m, predict(res.state, res.heads, prepared, splits["val"]))
        timings[f"finetune_{mode.lower()}"] = time.perf_counter() - t0
        if out_dir is not None:
            (Path(out_dir) / f"hyp_{mode.lower()}.rttm").write_text(write_rttm(hyp))
    return RecipeResult(iterations, finetuned, reports, val_reports, splits, timings, prepared)
