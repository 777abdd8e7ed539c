"""Synthetic clean/noise generation, on-the-fly mixing and batching."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .dsp import SnrRange, snr_gain

CLEAN_KINDS = ("pseudo_speech", "tone_stack")
NOISE_KINDS = ("white", "pink", "band_limited")
PEAK = 0.99


@dataclass(frozen=True)
class UtteranceSpec:
    seed: int
    duration: float
    kind: str = "pseudo_speech"
    sample_rate: int = 16000
    f0: float | None = None

    @property
    def n_samples(self) -> int:
        n = self.duration * self.sample_rate
        if abs(n - round(n)) > 1e-6:
            raise ValueError(f"duration {self.duration}s is not a whole number of samples at {self.sample_rate} Hz")
        return int(round(n))


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


def gen_clean(spec: UtteranceSpec) -> np.ndarray:
    """Deterministic speech-like signal for a given seed, peak <= 0.5 so most mixtures stay under the clipping guard."""
    if spec.kind not in CLEAN_KINDS:
        raise ValueError(f"unknown clean kind {spec.kind!r}; expected one of {CLEAN_KINDS}")
    n, sr = spec.n_samples, spec.sample_rate
    rng = _rng(spec.seed, 1)
    t = np.arange(n) / sr
    if spec.kind == "tone_stack":
        f0 = spec.f0 if spec.f0 is not None else rng.uniform(100.0, 300.0)
        n_h = 4
        amps = 1.0 / np.arange(1, n_h + 1)
        x = sum(a * np.sin(2 * np.pi * f0 * (h + 1) * t) for h, a in enumerate(amps))
    else:
        f0 = spec.f0 if spec.f0 is not None else rng.uniform(90.0, 260.0)
        n_h = int(rng.integers(3, 7))
        # slow pitch drift plus vibrato-like wobble, integrated into phase
        drift = rng.uniform(-0.25, 0.25)
        wob_f, wob_d = rng.uniform(2.0, 6.0), rng.uniform(0.0, 0.04)
        inst_f0 = f0 * (1.0 + drift * t / max(t[-1], 1e-9) + wob_d * np.sin(2 * np.pi * wob_f * t))
        phase = 2 * np.pi * np.cumsum(inst_f0) / sr
        amps = rng.uniform(0.2, 1.0, n_h) / np.arange(1, n_h + 1)
        x = np.zeros(n)
        for h in range(n_h):
            if f0 * (h + 1) * 1.3 < sr / 2:
                x += amps[h] * np.sin((h + 1) * phase + rng.uniform(0, 2 * np.pi))
        # syllable envelope: raised-cosine bumps at a random rate
        rate = rng.uniform(2.5, 5.0)
        env = 0.5 - 0.5 * np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        x *= 0.15 + 0.85 * env
    peak = np.max(np.abs(x))
    level = rng.uniform(0.2, 0.5)
    return (x / peak * level) if peak > 0 else x


def gen_noise(seed: int, n: int, kind: str = "white", sample_rate: int = 16000) -> np.ndarray:
    """Unit-RMS noise of the requested colour."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    rng = _rng(seed, 2)
    w = rng.standard_normal(n)
    if kind != "white":
        spec = np.fft.rfft(w)
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        if kind == "pink":
            # -3 dB/octave in power: amplitude ~ f^-1/2
            shape = np.zeros_like(f)
            shape[1:] = 1.0 / np.sqrt(f[1:])
        else:
            lo = rng.uniform(200.0, 2000.0)
            hi = min(lo * rng.uniform(1.5, 4.0), sample_rate / 2)
            shape = ((f >= lo) & (f <= hi)).astype(float)
        w = np.fft.irfft(spec * shape, n)
    rms = np.sqrt(np.mean(w * w))
    return w / rms if rms > 0 else w


class MixturePair(NamedTuple):
    clean: np.ndarray
    noisy: np.ndarray
    snr_db: float


def make_mixture(clean: np.ndarray, noise: np.ndarray, snr_range: SnrRange = SnrRange(),
                 rng: np.random.Generator | None = None, snr: float | None = None) -> MixturePair:
    """clean + g * noise at an SNR drawn uniformly from ``snr_range`` (or forced via ``snr``).

    If the mixture would exceed the peak limit, clean and noisy are scaled together,
    which leaves the realised SNR unchanged.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ValueError(f"make_mixture: clean {clean.shape} and noise {noise.shape} differ in length")
    if snr is None:
        rng = rng if rng is not None else np.random.default_rng()
        snr = float(rng.uniform(snr_range.low, snr_range.high))
    g = snr_gain(clean, noise, snr)
    noisy = clean + g * noise
    peak = np.max(np.abs(noisy))
    if peak > PEAK:
        scale = PEAK / peak
        clean, noisy = clean * scale, noisy * scale
    return MixturePair(clean, noisy, snr)


@dataclass
class DataConfig:
    n_utterances: int = 200
    crop_seconds: float = 0.5
    sample_rate: int = 16000
    val_every: int = 10          # every val_every-th utterance index is held out
    snr_low: float = -5.0
    snr_high: float = 20.0
    seed: int = 0
    workers: int = 1
    noise_kinds: list[str] = field(default_factory=lambda: list(NOISE_KINDS))

    @property
    def crop(self) -> int:
        return int(round(self.crop_seconds * self.sample_rate))

    @property
    def snr_range(self) -> SnrRange:
        return SnrRange(self.snr_low, self.snr_high)


class Batch(NamedTuple):
    clean: np.ndarray   # [B, L]
    noisy: np.ndarray   # [B, L]
    snr_db: np.ndarray  # [B]


class SyntheticCorpus:
    """Fixed clean utterances; noise and SNR are redrawn for every (epoch, index).

    Every example is generated from its own seed derived from
    (global seed, epoch, index), so results do not depend on worker count
    or generation order.
    """

    VALIDATION_EPOCH = -1

    def __init__(self, cfg: DataConfig):
        if cfg.n_utterances < 1:
            raise ValueError("corpus must contain at least one utterance")
        self.cfg = cfg
        idx = np.arange(cfg.n_utterances)
        val_mask = (idx % cfg.val_every) == cfg.val_every - 1 if cfg.val_every > 0 else np.zeros_like(idx, bool)
        self.train_ids = idx[~val_mask]
        self.val_ids = idx[val_mask]
        self._clean: dict[int, np.ndarray] = {}

    def spec(self, index: int) -> UtteranceSpec:
        seed = int(np.random.SeedSequence([self.cfg.seed, 0xC1EA, index]).generate_state(1)[0])
        # about one in five utterances is a steady tone stack; drawn from the seed
        # rather than the index so the validation stride does not pick one kind
        kind = "tone_stack" if seed % 5 == 0 else "pseudo_speech"
        return UtteranceSpec(seed=seed, duration=self.cfg.crop_seconds, kind=kind,
                             sample_rate=self.cfg.sample_rate)

    def clean(self, index: int) -> np.ndarray:
        if index not in self._clean:
            self._clean[index] = gen_clean(self.spec(index))
        return self._clean[index]

    def example(self, epoch: int, index: int) -> MixturePair:
        rng = _rng(self.cfg.seed, epoch + 7, index)
        kind = self.cfg.noise_kinds[int(rng.integers(len(self.cfg.noise_kinds)))]
        noise = gen_noise(int(rng.integers(2**31)), self.cfg.crop, kind, self.cfg.sample_rate)
        return make_mixture(self.clean(index), noise, self.cfg.snr_range, rng)

    def _examples(self, epoch: int, ids) -> list[MixturePair]:
        # clean cache is filled serially first so workers only read it
        for i in ids:
            self.clean(int(i))
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                return list(pool.map(lambda i: self.example(epoch, int(i)), ids))
        return [self.example(epoch, int(i)) for i in ids]

    def batches(self, epoch: int, batch_size: int = 4, shuffle: bool = True) -> Iterator[Batch]:
        ids = self.train_ids.copy()
        if shuffle:
            _rng(self.cfg.seed, epoch + 7, 0x5EED).shuffle(ids)
        for start in range(0, len(ids), batch_size):
            yield _stack(self._examples(epoch, ids[start:start + batch_size]))

    def validation(self, batch_size: int = 4) -> Iterator[Batch]:
        for start in range(0, len(self.val_ids), batch_size):
            yield _stack(self._examples(self.VALIDATION_EPOCH, self.val_ids[start:start + batch_size]))

    def corpus_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for i in range(self.cfg.n_utterances):
            h.update(self.clean(i).tobytes())
        return h.hexdigest()[:16]


def _stack(pairs: list[MixturePair]) -> Batch:
    return Batch(np.stack([p.clean for p in pairs]), np.stack([p.noisy for p in pairs]),
                 np.array([p.snr_db for p in pairs]))


def heldout_set(n: int, cfg: DataConfig, seed_offset: int = 10_000) -> list[MixturePair]:
    """Mixtures whose clean and noise seeds are disjoint from the training corpus."""
    sub = DataConfig(**{**cfg.__dict__, "n_utterances": n, "seed": cfg.seed + seed_offset, "val_every": 0})
    corpus = SyntheticCorpus(sub)
    return [corpus.example(SyntheticCorpus.VALIDATION_EPOCH, i) for i in range(n)]


def read_manifest(path) -> list[list[str]]:
    """One entry per non-blank line; tab- or whitespace-separated columns; '#' starts a comment."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(line.split("\t") if "\t" in line else line.split())
    return rows
