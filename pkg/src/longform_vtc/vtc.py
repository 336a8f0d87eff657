"""Voice-type classification: four independent sigmoid heads on the encoder.

Frame targets come from rasterising reference timelines on the 50 Hz grid
(a frame is positive when its midpoint lies inside a segment).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus import VOICE_TYPES, VoiceType
from .features import FRAME_RATE, NormStats
from .optim import Adam, PlateauHalver, clip_grads
from .ssl.encoder import EncoderState, backward, forward
from .timeline import Segment, Timeline
from .windows import STRIDE_FRAMES, WINDOW_FRAMES, sliding_average, window_starts

logger = logging.getLogger(__name__)

FROZEN = "FROZEN"
FULL = "FULL"
N_CLASSES = len(VOICE_TYPES)
PROB_CLAMP = 1e-7


@dataclass
class HeadParams:
    weight: np.ndarray  # (4, d_model)
    bias: np.ndarray  # (4,)
    dropout_prob: float = 0.5

    def __post_init__(self):
        if self.weight.shape[0] != N_CLASSES or self.bias.shape != (N_CLASSES,):
            raise ValueError("exactly one head per voice type is required")

    @property
    def d_model(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "HeadParams":
        return HeadParams(self.weight.copy(), self.bias.copy(), self.dropout_prob)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


def init_heads(d_model: int, seed: int = 0, dropout_prob: float = 0.5, dtype=np.float32) -> HeadParams:
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / np.sqrt(d_model), size=(N_CLASSES, d_model))
    return HeadParams(w.astype(dtype), np.zeros(N_CLASSES, dtype=dtype), dropout_prob)


@dataclass
class FrameScores:
    probs: np.ndarray  # (n_frames, 4), canonical VoiceType order
    frame_rate: float = FRAME_RATE

    @property
    def n_frames(self) -> int:
        return self.probs.shape[0]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def heads_forward(activations, heads: HeadParams, training: bool = False, seed=None,
                  return_cache: bool = False):
    """Per-class ``sigmoid(w . h + b)``; dropout on the activations only while training."""
    h = np.asarray(activations)
    if h.shape[-1] != heads.d_model:
        raise ValueError(f"activation dim {h.shape[-1]} does not match head dim {heads.d_model}")
    keep = None
    if training and heads.dropout_prob > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        keep = (rng.random(h.shape) >= heads.dropout_prob) / (1.0 - heads.dropout_prob)
        h = h * keep.astype(h.dtype)
    logits = h @ heads.weight.T + heads.bias
    probs = _sigmoid(logits)
    if return_cache:
        return probs, dict(h=h, keep=keep)
    return FrameScores(probs if probs.ndim == 2 else probs.reshape(-1, N_CLASSES))


def multilabel_bce(scores, targets) -> float:
    """Mean binary cross-entropy over frames and classes with clamped probabilities."""
    return bce_and_grad(getattr(scores, "probs", scores), targets)[0]


def bce_and_grad(probs, targets):
    """Loss and its gradient w.r.t. the head logits."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"score shape {p.shape} does not match target shape {y.shape}")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    grad = np.where(inside, (p - y) / p.size, 0.0)
    return loss, grad


# -- rasterisation / decoding ------------------------------------------------------


def rasterize(timelines: Mapping, n_frames: int, frame_rate: float = FRAME_RATE) -> np.ndarray:
    """``(n_frames, 4)`` 0/1 targets; frame t is positive iff ``(t + 0.5) / frame_rate``
    falls inside a segment of that class."""
    out = np.zeros((n_frames, N_CLASSES), dtype=np.float32)
    for c, vt in enumerate(VOICE_TYPES):
        tl = timelines.get(vt, timelines.get(str(vt)))
        if tl is None:
            continue
        pairs = tl.pairs() if isinstance(tl, Timeline) else [tuple(s) for s in tl]
        for on, off in pairs:
            # midpoint (t + 0.5) / fr in [on, off)  <=>  t in [on*fr - 0.5, off*fr - 0.5)
            start = max(0, int(np.ceil(on * frame_rate - 0.5 - 1e-9)))
            stop = min(n_frames, int(np.ceil(off * frame_rate - 0.5 - 1e-9)))
            if stop > start:
                out[start:stop, c] = 1.0
    return out


def _runs(active: np.ndarray) -> List[Tuple[int, int]]:
    padded = np.concatenate([[False], active, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def decode_timeline(
    scores: FrameScores,
    thresholds: Union[float, Sequence[float], Mapping] = 0.5,
    min_duration_on: float = 0.0,
    min_duration_off: float = 0.0,
    recording_id: str = "",
) -> Dict[VoiceType, Timeline]:
    """Threshold each class independently; drop short segments, then fill short gaps."""
    if isinstance(thresholds, Mapping):
        thr = [thresholds.get(vt, thresholds.get(str(vt), 0.5)) for vt in VOICE_TYPES]
    elif np.ndim(thresholds) == 0:
        thr = [float(thresholds)] * N_CLASSES
    else:
        thr = list(thresholds)
    fr = scores.frame_rate
    min_on = min_duration_on * fr - 1e-9
    min_off = min_duration_off * fr - 1e-9
    out = {}
    for c, vt in enumerate(VOICE_TYPES):
        runs = [r for r in _runs(scores.probs[:, c] >= thr[c]) if r[1] - r[0] >= min_on]
        filled: List[Tuple[int, int]] = []
        for start, stop in runs:
            if filled and start - filled[-1][1] < min_off:
                filled[-1] = (filled[-1][0], stop)
            else:
                filled.append((start, stop))
        out[vt] = Timeline(recording_id, str(vt), [Segment(a / fr, b / fr) for a, b in filled])
    return out


# -- inference ----------------------------------------------------------------------

def infer_frames(state: EncoderState, heads: HeadParams, features, window: int = WINDOW_FRAMES,
                 stride: int = STRIDE_FRAMES) -> FrameScores:
    """Frame probabilities from 4 s windows with 2 s stride, averaged where windows overlap."""
    x = np.asarray(getattr(features, "data", features), dtype=state.dtype)

    def run(batch):
        final = forward(state, batch, None, compute_logits=False).activations[-1]
        return heads_forward(final, heads, training=False, return_cache=True)[0]

    return FrameScores(sliding_average(run, x, window, stride))


def threshold_sweep(scores: Sequence[FrameScores], targets: Sequence[np.ndarray],
                    grid=np.arange(0.1, 0.9001, 0.05)) -> Dict[VoiceType, float]:
    """Per-class threshold maximising frame-level F on validation data (optional)."""
    probs = np.concatenate([s.probs for s in scores])
    y = np.concatenate(targets) > 0.5
    best = {}
    for c, vt in enumerate(VOICE_TYPES):
        scored = []
        for t in grid:
            pred = probs[:, c] >= t
            tp = float((pred & y[:, c]).sum())
            fp = float((pred & ~y[:, c]).sum())
            fn = float((~pred & y[:, c]).sum())
            f = 2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0
            scored.append((f, -abs(t - 0.5), float(round(t, 2))))
        best[vt] = max(scored)[2]
    return best


# -- fine-tuning -----------------------------------------------------------------------


@dataclass
class FinetuneSettings:
    lr: float = 1e-5
    batch_size: int = 16
    crop_frames: int = WINDOW_FRAMES
    max_steps: int = 1000
    eval_every: int = 50
    patience: int = 3
    lr_factor: float = 0.5
    min_delta: float = 1e-4
    min_lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    clip_norm: Optional[float] = 5.0
    dropout_prob: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "FinetuneSettings":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class LabeledRecording:
    features: np.ndarray  # (T, D), normalised encoder input
    targets: np.ndarray  # (T, 4)
    recording_id: str = ""


@dataclass
class FinetuneResult:
    state: EncoderState
    heads: HeadParams
    train_curve: List[Tuple[int, float, float]] = field(default_factory=list)
    val_curve: List[Tuple[int, float, float]] = field(default_factory=list)
    best_step: int = 0
    best_val_loss: float = float("inf")


def _val_windows(data: Sequence[LabeledRecording], crop: int):
    xs, ys = [], []
    for rec in data:
        n = len(rec.features)
        if n < crop:
            continue
        for s in range(0, n - crop + 1, crop):
            xs.append(rec.features[s:s + crop])
            ys.append(rec.targets[s:s + crop])
    return xs, ys


def validation_loss(state, heads, xs, ys, max_batch: int = 32) -> float:
    total, count = 0.0, 0
    for b in range(0, len(xs), max_batch):
        x = np.stack(xs[b:b + max_batch]).astype(state.dtype)
        final = forward(state, x, None, compute_logits=False).activations[-1]
        probs = heads_forward(final, heads, training=False, return_cache=True)[0]
        y = np.stack(ys[b:b + max_batch])
        total += multilabel_bce(probs, y) * y.size
        count += y.size
    return total / max(count, 1)


def finetune(
    state: EncoderState,
    heads: HeadParams,
    train: Sequence[LabeledRecording],
    val: Sequence[LabeledRecording],
    mode: str = FULL,
    settings: Optional[FinetuneSettings] = None,
    seed: int = 0,
) -> FinetuneResult:
    """Train the heads (FROZEN) or heads plus transformer (FULL).

    The rate is halved whenever validation loss stalls for ``patience``
    evaluations; the best-validation snapshot is returned.
    """
    settings = settings or FinetuneSettings()
    mode = mode.upper()
    if mode not in (FROZEN, FULL):
        raise ValueError(f"mode must be FROZEN or FULL, got {mode!r}")
    usable = [r for r in train if len(r.features) > 0]
    if not usable:
        raise ValueError("no training data")
    rng = np.random.default_rng(seed)
    state = state.copy()
    heads = heads.copy()
    heads.dropout_prob = settings.dropout_prob
    dtype = state.dtype
    crop = min(settings.crop_frames, max(len(r.features) for r in usable))
    usable = [r for r in usable if len(r.features) >= crop]
    positions = np.array([len(r.features) - crop + 1 for r in usable])
    weights = positions / positions.sum()
    vx, vy = _val_windows(val, crop) if val else ([], [])

    head_params = {"head.weight": heads.weight, "head.bias": heads.bias}
    head_opt = Adam(head_params, lr=settings.lr, betas=(settings.beta1, settings.beta2), eps=settings.eps)
    enc_opt = None
    if mode == FULL:
        enc_opt = Adam(state.params, lr=settings.lr, betas=(settings.beta1, settings.beta2), eps=settings.eps)
    sched = PlateauHalver(settings.lr, settings.patience, settings.lr_factor, settings.min_delta)
    result = FinetuneResult(state.copy(), heads.copy())
    lr = settings.lr

    for step in range(settings.max_steps):
        which = rng.choice(len(usable), size=settings.batch_size, p=weights)
        starts = [int(rng.integers(positions[i])) for i in which]
        x = np.stack([usable[i].features[s:s + crop] for i, s in zip(which, starts)]).astype(dtype)
        y = np.stack([usable[i].targets[s:s + crop] for i, s in zip(which, starts)])
        fr = forward(state, x, None, keep_cache=(mode == FULL), compute_logits=False)
        final = fr.activations[-1]
        probs, hc = heads_forward(final, heads, training=True, seed=rng, return_cache=True)
        loss, dlogit = bce_and_grad(probs, y)
        dlogit = dlogit.astype(dtype)
        grads = {
            "head.weight": (dlogit.reshape(-1, N_CLASSES).T @ hc["h"].reshape(-1, heads.d_model)).astype(dtype),
            "head.bias": dlogit.reshape(-1, N_CLASSES).sum(axis=0).astype(dtype),
        }
        if mode == FULL:
            dfinal = dlogit @ heads.weight
            if hc["keep"] is not None:
                dfinal = dfinal * hc["keep"].astype(dtype)
            enc_grads = backward(state, fr.cache, d_final=dfinal)
            # the mask embedding and cluster-prediction path are unused while fine-tuning
            for k in ("mask_emb", "output_proj.w", "output_proj.b", "codewords"):
                enc_grads[k] = np.zeros_like(enc_grads[k])
            allg = {**enc_grads, **grads}
            clip_grads(allg, settings.clip_norm)
            grads = {k: allg[k] for k in grads}
            enc_opt.step(state.params, {k: allg[k] for k in state.params}, lr=lr)
        else:
            clip_grads(grads, settings.clip_norm)
        head_opt.step(head_params, grads, lr=lr)
        result.train_curve.append((step, loss, lr))

        last = step == settings.max_steps - 1
        if vx and ((step + 1) % settings.eval_every == 0 or last):
            vloss = validation_loss(state, heads, vx, vy)
            result.val_curve.append((step + 1, vloss, lr))
            if vloss < result.best_val_loss:
                result.best_val_loss = vloss
                result.best_step = step + 1
                result.state = state.copy()
                result.heads = heads.copy()
            lr = max(settings.min_lr, sched.update(vloss))
            logger.info("finetune %s step %d train %.4f val %.4f lr %.2e", mode, step + 1, loss, vloss, lr)
    if not vx:
        result.state, result.heads, result.best_step = state.copy(), heads.copy(), settings.max_steps
    return result


# -- persistence --------------------------------------------------------------------------


def save_vtc_model(path, state: EncoderState, heads: HeadParams, norm: Optional[NormStats] = None,
                   meta: Optional[dict] = None) -> None:
    from .ssl.encoder import save_encoder

    extra = {"head.weight": heads.weight, "head.bias": heads.bias}
    if norm is not None:
        extra["norm.mean"] = np.asarray(norm.mean, dtype=np.float64)
        extra["norm.std"] = np.asarray(norm.std, dtype=np.float64)
    save_encoder(path, state, {"dropout_prob": heads.dropout_prob, **(meta or {})}, extra)


def load_vtc_model(path):
    """Returns ``(state, heads, norm_stats_or_None, meta)``."""
    from .ssl.encoder import load_encoder

    state, meta, extra = load_encoder(path)
    heads = HeadParams(extra["head.weight"], extra["head.bias"], meta.get("dropout_prob", 0.5))
    norm = NormStats(extra["norm.mean"], extra["norm.std"]) if "norm.mean" in extra else None
    return state, heads, norm, meta
