"""Parameter-free spectral frontend on a shared 50 Hz frame clock."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
WINDOW = 0.025
HOP = 0.020
FRAME_RATE = 50.0
N_FFT = 512
N_MELS = 40
N_CEPS = 13
LOG_FLOOR = 1e-10

WINDOW_SAMPLES = int(round(WINDOW * SAMPLE_RATE))
HOP_SAMPLES = int(round(HOP * SAMPLE_RATE))


@dataclass
class FrameMatrix:
    data: np.ndarray
    origin: str = "LOGMEL"
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"frame matrix must be 2-D, got shape {self.data.shape}")

    @property
    def hop(self) -> float:
        return 1.0 / self.frame_rate

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def save(self, path: Union[str, Path]) -> None:
        """Write ``<path>`` (little-endian float32) and ``<path>.json``."""
        path = Path(path)
        self.data.astype("<f4").tofile(path)
        meta = {"n_frames": self.n_frames, "dim": self.dim, "frame_rate": self.frame_rate, "origin": self.origin}
        Path(str(path) + ".json").write_text(json.dumps(meta) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FrameMatrix":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        data = np.fromfile(path, dtype="<f4").reshape(meta["n_frames"], meta["dim"])
        return cls(data=data.astype(np.float32), origin=meta["origin"], frame_rate=meta["frame_rate"])


def n_frames_for(n_samples: int) -> int:
    if n_samples < WINDOW_SAMPLES:
        return 0
    return (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES + 1


def frame_signal(samples: np.ndarray, window: float = WINDOW, hop: float = HOP,
                 sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Frame ``t`` covers samples ``[t*hop, t*hop + window)``; no padding."""
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"sample rate must be {SAMPLE_RATE}")
    samples = np.asarray(samples, dtype=np.float64)
    win = int(round(window * sample_rate))
    step = int(round(hop * sample_rate))
    if samples.ndim != 1 or samples.shape[0] < win:
        raise ValueError(f"signal too short: need at least {win} samples, got {samples.shape[-1]}")
    n = (samples.shape[0] - win) // step + 1
    view = np.lib.stride_tricks.sliding_window_view(samples, win)
    return view[::step][:n]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


_FILTERBANKS = {}


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: Optional[float] = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    key = (n_mels, n_fft, sample_rate, fmin, fmax)
    if key not in _FILTERBANKS:
        freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
        edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
        lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rising = (freqs[None] - lower) / (center - lower)
        falling = (upper - freqs[None]) / (upper - center)
        _FILTERBANKS[key] = np.maximum(0.0, np.minimum(rising, falling))
    return _FILTERBANKS[key]


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    window = get_window("hann", frames.shape[1], fftbins=True)
    spec = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def log_mel(frames: np.ndarray) -> FrameMatrix:
    mel = power_spectrum(frames) @ mel_filterbank().T
    return FrameMatrix(np.log(np.maximum(mel, LOG_FLOOR)), origin="LOGMEL")


def deltas(x: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-``width`` frames with edge replication."""
    n = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], width, axis=0), x, np.repeat(x[-1:], width, axis=0)])
    num = sum(k * (padded[width + k:width + k + n] - padded[width - k:width - k + n]) for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def cepstra(logmel: np.ndarray, n_ceps: int = N_CEPS) -> np.ndarray:
    return dct(logmel, type=2, axis=1, norm="ortho")[:, :n_ceps]


def mfcc(frames: np.ndarray) -> FrameMatrix:
    """13 cepstra (c0 included) plus first and second deltas: 39 dims."""
    c = cepstra(log_mel(frames).data)
    d1 = deltas(c)
    d2 = deltas(d1)
    return FrameMatrix(np.concatenate([c, d1, d2], axis=1), origin="MFCC")


def extract(samples: np.ndarray, kind: str = "logmel") -> FrameMatrix:
    frames = frame_signal(samples)
    if kind == "logmel":
        return log_mel(frames)
    if kind == "mfcc":
        return mfcc(frames)
    raise ValueError(f"unknown feature kind {kind!r}")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: Union[np.ndarray, list]) -> "NormStats":
        """Per-dimension stats; pass the training split only."""
        if isinstance(data, list):
            data = np.concatenate([np.asarray(d) for d in data], axis=0)
        data = np.asarray(data, dtype=np.float64)
        return cls(mean=data.mean(axis=0), std=data.std(axis=0))


def normalize(fm: Union[FrameMatrix, np.ndarray], stats: NormStats) -> Union[FrameMatrix, np.ndarray]:
    """``(x - mean) / std`` per dimension; zero-variance dimensions pass through."""
    data = fm.data if isinstance(fm, FrameMatrix) else np.asarray(fm)
    dead = ~(stats.std > 0)
    if dead.any():
        logger.warning("normalize: %d zero-variance dimension(s) passed through unchanged", int(dead.sum()))
    mean = np.where(dead, 0.0, stats.mean)
    std = np.where(dead, 1.0, stats.std)
    out = ((data - mean) / std).astype(data.dtype if data.dtype.kind == "f" else np.float64)
    if isinstance(fm, FrameMatrix):
        return FrameMatrix(out, origin=fm.origin, frame_rate=fm.frame_rate)
    return out


def frame_span(onset: float, offset: float, n_frames: int, frame_rate: float = FRAME_RATE) -> Tuple[int, int]:
    """Frame index range of a time span on the 50 Hz grid, clipped to ``n_frames``."""
    start = int(round(onset * frame_rate))
    stop = int(round(offset * frame_rate))
    return max(0, min(start, n_frames)), max(0, min(stop, n_frames))
