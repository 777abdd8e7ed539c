"""16-bit PCM mono WAV reading/writing."""

from __future__ import annotations

import os
import tempfile
import wave
from pathlib import Path

import numpy as np


class WavFormatError(ValueError):
    pass


def wav_read(path) -> tuple[np.ndarray, int]:
    """Return (samples / 32768 as float64, sample_rate)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            frames = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: malformed WAV header ({exc})") from None
    if channels != 1:
        raise WavFormatError(f"{path}: {channels} channels; only mono is supported")
    if width != 2:
        raise WavFormatError(f"{path}: {8 * width}-bit samples; only 16-bit PCM is supported")
    pcm = np.frombuffer(frames, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, rate


def to_pcm16(x) -> np.ndarray:
    # same 32768 scale as wav_read, so read -> write reproduces the file exactly
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def wav_write(path, wave_data, sample_rate: int) -> None:
    """Write float samples (clamped) as 16-bit PCM mono; the file appears atomically."""
    path = Path(path)
    pcm = to_pcm16(np.asarray(wave_data).reshape(-1))
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        with wave.open(tmp, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(int(sample_rate))
            w.writeframes(pcm.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
