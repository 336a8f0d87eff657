"""Masked cluster-prediction pre-training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..optim import Adam, clip_grads, warmup_linear
from .encoder import EncoderConfig, EncoderState, backward, forward, init_state, save_encoder
from .objective import mask_spans, masked_prediction_loss_and_grad

logger = logging.getLogger(__name__)


@dataclass
class PretrainSettings:
    steps: int = 500
    batch_size: int = 8
    crop_frames: int = 100
    peak_lr: float = 1e-3
    warmup_frac: float = 0.08
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    clip_norm: Optional[float] = 5.0
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainSettings":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class Utterance:
    """Encoder input frames with their pseudo-label targets."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise ValueError("features and targets must have the same number of frames")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class CurvePoint:
    step: int
    loss: float
    lr: float


def save_curve(curve: Sequence[CurvePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "lr"])
        for c in curve:
            w.writerow([c.step, repr(c.loss), repr(c.lr)])


class CropSampler:
    """Draws equal-length crops, uniformly over all valid crop positions."""

    def __init__(self, utterances: Sequence[Utterance], crop_frames: int):
        lengths = np.array([len(u.features) for u in utterances])
        if not len(lengths) or lengths.max() < 1:
            raise ValueError("no training frames")
        self.crop = int(min(crop_frames, lengths.max()))
        keep = np.flatnonzero(lengths >= self.crop)
        self.utterances = [utterances[i] for i in keep]
        positions = lengths[keep] - self.crop + 1
        self.weights = positions / positions.sum()
        self.positions = positions

    def sample(self, batch_size: int, rng: np.random.Generator):
        which = rng.choice(len(self.utterances), size=batch_size, p=self.weights)
        xs, ys = [], []
        for i in which:
            start = int(rng.integers(self.positions[i]))
            u = self.utterances[i]
            xs.append(u.features[start:start + self.crop])
            ys.append(u.targets[start:start + self.crop])
        return np.stack(xs), np.stack(ys)


def train_step(state: EncoderState, opt: Adam, x, y, masks, lr, clip_norm):
    fr = forward(state, x, masks, keep_cache=True)
    loss, dlogits = masked_prediction_loss_and_grad(fr.logits, y, masks)
    grads = backward(state, fr.cache, d_logits=dlogits)
    clip_grads(grads, clip_norm)
    opt.step(state.params, grads, lr=lr)
    return loss


def train_pretrain_iteration(
    utterances: Sequence[Utterance],
    config: EncoderConfig,
    settings: Optional[PretrainSettings] = None,
    seed: int = 0,
    state: Optional[EncoderState] = None,
) -> Tuple[EncoderState, List[CurvePoint]]:
    """Train an encoder to predict the cluster ids of masked frames.

    The loss recorded at each step is the batch loss *before* that step's
    update, so ``curve[0]`` is the loss of the initialisation.
    """
    settings = settings or PretrainSettings()
    dtype = np.float64 if settings.dtype == "float64" else np.float32
    rng = np.random.default_rng(seed)
    if state is None:
        state = init_state(config, seed=int(rng.integers(2 ** 31)), dtype=dtype)
    else:
        state = state.copy()
    curve: List[CurvePoint] = []
    if settings.steps <= 0:
        return state, curve
    sampler = CropSampler(utterances, settings.crop_frames)
    opt = Adam(state.params, lr=settings.peak_lr, betas=(settings.beta1, settings.beta2), eps=settings.eps)
    ckpt_dir = Path(settings.checkpoint_dir) if settings.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_good = state.copy()
    for step in range(settings.steps):
        lr = warmup_linear(step, settings.steps, settings.peak_lr, settings.warmup_frac)
        x, y = sampler.sample(settings.batch_size, rng)
        masks = np.stack([mask_spans(sampler.crop, config.mask_prob, config.mask_len, rng).mask
                          for _ in range(settings.batch_size)])
        try:
            loss = train_step(state, opt, x.astype(dtype), y, masks, lr, settings.clip_norm)
        except FloatingPointError:
            loss = float("nan")
        if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in state.params.values()):
            if ckpt_dir:
                save_encoder(ckpt_dir / "diverged_last_good.ckpt", last_good, {"step": step})
            raise TrainingDiverged(f"pre-training loss became non-finite at step {step}")
        curve.append(CurvePoint(step, loss, lr))
        if settings.checkpoint_every and (step + 1) % settings.checkpoint_every == 0:
            last_good = state.copy()
            if ckpt_dir:
                save_encoder(ckpt_dir / f"step{step + 1:06d}.ckpt", state,
                             {"step": step + 1, "settings": asdict(settings)})
        if step % 50 == 0:
            logger.info("pretrain step %d loss %.4f lr %.2e", step, loss, lr)
    return state, curve
