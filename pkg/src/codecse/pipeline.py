"""End-to-end enhancement: encode -> SE -> quantize -> decode, with per-stage timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecModel, pad_to_multiple
from .se_model import SEModel
from .tensor import Tensor, no_grad

STAGES = ("encode", "se", "quantize", "decode")


@dataclass
class EnhanceResult:
    y_out: np.ndarray
    y_e: np.ndarray
    y_h: np.ndarray
    codes: np.ndarray
    stage_seconds: dict[str, float] = field(default_factory=dict)


class EnhancementPipeline:
    def __init__(self, codec: CodecModel, se: SEModel | None):
        self.codec = codec
        self.se = se

    @property
    def sample_rate(self) -> int:
        return self.codec.config.sample_rate

    def enhance(self, wave) -> EnhanceResult:
        """Pad to a multiple of the hop, run every stage, truncate back to the input length.

        With ``se=None`` the pipeline is a plain codec round trip.
        """
        x = np.asarray(getattr(wave, "data", wave), dtype=np.float64)
        n = x.shape[-1]
        xp = pad_to_multiple(x, self.codec.hop)
        times = {}
        with no_grad():
            t0 = time.perf_counter()
            y_e = self.codec.encode(xp)
            t1 = time.perf_counter()
            y_h = self.se(y_e) if self.se is not None else y_e
            t2 = time.perf_counter()
            q = self.codec.quantize(y_h)
            t3 = time.perf_counter()
            y = self.codec.decode(q.quantized)
            t4 = time.perf_counter()
        times = dict(zip(STAGES, (t1 - t0, t2 - t1, t3 - t2, t4 - t3)))
        return EnhanceResult(y.data[..., :n].copy(), y_e.data, y_h.data, q.codes, times)

    def __call__(self, wave) -> np.ndarray:
        return self.enhance(wave).y_out

    def encode_only(self, wave) -> Tensor:
        with no_grad():
            return self.codec.encode(pad_to_multiple(np.asarray(wave, dtype=np.float64), self.codec.hop))
