"""Synthetic long-form corpora with exact voice-type ground truth.

Each voice type is a harmonic stack at its own fundamental, amplitude
modulated at 4 Hz, mixed over a pink-noise floor. Speech events come in
conversational bouts: short pauses inside a bout, long silences between
bouts.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.signal import lfilter

from .corpus import SAMPLE_RATE, VOICE_TYPES, CorpusManifest, Recording, VoiceType, write_rttm
from .timeline import Segment

FUNDAMENTALS = {VoiceType.MAL: 120.0, VoiceType.FEM: 220.0, VoiceType.OCH: 340.0, VoiceType.KCHI: 420.0}
JITTER = 0.05
N_HARMONICS = 5
PEAK = 0.5
AM_RATE = 4.0
NOISE_DB = -20.0
MIN_EVENT, MAX_EVENT = 0.3, 6.0

# Paul Kellet's economy pinking filter
_PINK_B = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
_PINK_A = [1.0, -2.494956002, 2.017265875, -0.522189400]


@dataclass
class SynthSpec:
    n_recordings: int = 4
    duration_each: float = 600.0
    speech_fraction: float = 0.2
    overlap_prob: float = 0.0
    seed: int = 0
    dataset_name: str = "synthetic"
    mean_bout_events: float = 8.0
    intra_gap_range: Tuple[float, float] = (0.05, 0.4)
    children_per_recording: int = 1

    def validate(self) -> None:
        if self.n_recordings < 1:
            raise ValueError("n_recordings must be >= 1")
        if self.duration_each < 60.0:
            raise ValueError("duration_each must be >= 60 s")
        if not 0.0 < self.speech_fraction < 1.0:
            raise ValueError("speech_fraction must be in (0, 1)")
        if not 0.0 <= self.overlap_prob <= 1.0:
            raise ValueError("overlap_prob must be in [0, 1]")
        lo, hi = self.intra_gap_range
        if not 0 < lo <= hi:
            raise ValueError("intra_gap_range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class Event:
    label: VoiceType
    onset: float
    offset: float
    f0: float


def _ms(t: float) -> float:
    return round(t * 1000.0) / 1000.0


def class_signal(label: VoiceType, duration: float, seed=None, f0: Optional[float] = None) -> np.ndarray:
    """Harmonic stack (5 harmonics, 1/k amplitudes) with 4 Hz AM, peak 0.5."""
    if not duration > 0:
        raise ValueError("duration must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if f0 is None:
        f0 = FUNDAMENTALS[VoiceType(label)] * (1.0 + rng.uniform(-JITTER, JITTER))
    n = max(1, int(round(duration * SAMPLE_RATE)))
    t = np.arange(n) / SAMPLE_RATE
    phases = rng.uniform(0, 2 * np.pi, size=N_HARMONICS)
    sig = sum(np.sin(2 * np.pi * k * f0 * t + phases[k - 1]) / k for k in range(1, N_HARMONICS + 1))
    env = 0.75 + 0.25 * np.sin(2 * np.pi * AM_RATE * t + rng.uniform(0, 2 * np.pi))
    sig = sig * env
    return PEAK * sig / np.max(np.abs(sig))


def pink_noise(n: int, rng: np.random.Generator, rms: float) -> np.ndarray:
    white = rng.standard_normal(n + 4096)
    pink = lfilter(_PINK_B, _PINK_A, white)[4096:]
    return pink * (rms / np.sqrt(np.mean(pink ** 2)))


def make_schedule(duration: float, speech_fraction: float, overlap_prob: float, rng: np.random.Generator,
                  mean_bout_events: float = 8.0, intra_gap_range=(0.05, 0.4)) -> List[Event]:
    """Event list whose primary events cover ``speech_fraction`` of the recording."""
    target = speech_fraction * duration
    lengths = []
    while sum(lengths) < target:
        lengths.append(float(np.exp(rng.uniform(np.log(MIN_EVENT), np.log(MAX_EVENT)))))
    lengths[-1] -= sum(lengths) - target
    if lengths[-1] < MIN_EVENT and len(lengths) > 1:
        extra = lengths.pop()
        lengths[-1] += extra

    # bouts: geometric sizes
    bouts: List[List[float]] = []
    i = 0
    while i < len(lengths):
        size = int(rng.geometric(1.0 / mean_bout_events))
        bouts.append(lengths[i:i + size])
        i += size
    intra = [[float(rng.uniform(*intra_gap_range)) for _ in b[1:]] for b in bouts]
    silence = duration - target
    intra_total = sum(sum(g) for g in intra)
    if intra_total > 0.5 * silence:
        shrink = 0.5 * silence / intra_total
        intra = [[g * shrink for g in gs] for gs in intra]
        intra_total *= shrink
    # long silences between bouts and at both ends
    inter = rng.dirichlet(np.ones(len(bouts) + 1)) * (silence - intra_total)

    labels = list(VOICE_TYPES)
    order: List[VoiceType] = []
    events: List[Event] = []
    t = float(inter[0])
    for b, (bout, gaps) in enumerate(zip(bouts, intra)):
        for j, length in enumerate(bout):
            if not order:
                order = [labels[k] for k in rng.permutation(len(labels))]
            label = order.pop()
            on, off = _ms(t), _ms(t + length)
            if off > on:
                f0 = FUNDAMENTALS[label] * (1.0 + rng.uniform(-JITTER, JITTER))
                events.append(Event(label, on, off, f0))
                if overlap_prob > 0 and rng.random() < overlap_prob:
                    other = [c for c in labels if c != label][int(rng.integers(len(labels) - 1))]
                    span = off - on
                    o_len = span * rng.uniform(0.3, 1.0)
                    o_on = _ms(on + rng.uniform(0, span - o_len))
                    o_off = min(off, _ms(o_on + o_len))
                    if o_off > o_on:
                        events.append(Event(other, o_on, o_off,
                                            FUNDAMENTALS[other] * (1.0 + rng.uniform(-JITTER, JITTER))))
            t += length
            if j < len(gaps):
                t += gaps[j]
        t += float(inter[b + 1])
    return events


def render(events: List[Event], duration: float, rng: np.random.Generator) -> np.ndarray:
    n = int(round(duration * SAMPLE_RATE))
    noise_rms = PEAK * 10 ** (NOISE_DB / 20.0)
    audio = pink_noise(n, rng, noise_rms)
    for ev in events:
        start = int(round(ev.onset * SAMPLE_RATE))
        stop = min(n, int(round(ev.offset * SAMPLE_RATE)))
        if stop > start:
            audio[start:stop] += class_signal(ev.label, (stop - start) / SAMPLE_RATE, rng, f0=ev.f0)
    return np.clip(audio, -1.0, 1.0)


def write_wav(path: Union[str, Path], samples: np.ndarray) -> None:
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def read_wav(path: Union[str, Path]) -> np.ndarray:
    with wave.open(str(path), "rb") as w:
        if w.getframerate() != SAMPLE_RATE or w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16 kHz mono PCM16")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0


@dataclass
class SynthCorpus:
    manifest: CorpusManifest
    audio: Dict[str, np.ndarray]
    events: Dict[str, List[Event]]

    @property
    def rttm(self) -> str:
        return write_rttm(self.manifest.entries())


def generate_corpus(spec: SynthSpec, out_dir: Optional[Union[str, Path]] = None,
                    render_audio: bool = True) -> SynthCorpus:
    """Build recordings, manifest and ground truth; optionally write WAV/RTTM/JSON."""
    spec.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "audio").mkdir(parents=True, exist_ok=True)
    recordings, annotations, audio, schedule = [], {}, {}, {}
    for i in range(spec.n_recordings):
        rng = np.random.default_rng([spec.seed, i])
        rec_id = f"{spec.dataset_name}_{i:03d}"
        events = make_schedule(spec.duration_each, spec.speech_fraction, spec.overlap_prob, rng,
                               spec.mean_bout_events, spec.intra_gap_range)
        path = None
        if render_audio:
            samples = render(events, spec.duration_each, rng)
            audio[rec_id] = samples
            if out is not None:
                path = str(Path("audio") / f"{rec_id}.wav")
                write_wav(out / path, samples)
        child = f"child_{i // spec.children_per_recording:03d}"
        recordings.append(Recording(rec_id, child, spec.duration_each, SAMPLE_RATE, path))
        annotations[rec_id] = [(ev.label, Segment(ev.onset, ev.offset)) for ev in events]
        schedule[rec_id] = events
    manifest = CorpusManifest(spec.dataset_name, recordings, annotations)
    corpus = SynthCorpus(manifest, audio, schedule)
    if out is not None:
        manifest.save(out / "manifest.json")
        (out / "reference.rttm").write_text(corpus.rttm)
    return corpus


def frame_classes(manifest: CorpusManifest, rec_id: str, n_frames: int, frame_rate: float = 50.0) -> np.ndarray:
    """Per-frame ground-truth class index (0..3), 4 for non-speech, 5 for overlap."""
    from .vtc import rasterize

    targets = rasterize(manifest.class_timelines(rec_id), n_frames, frame_rate)
    out = np.full(n_frames, 4, dtype=np.int64)
    active = targets.sum(axis=1)
    single = active == 1
    out[single] = targets[single].argmax(axis=1)
    out[active > 1] = 5
    return out
