"""Training objective: latent L1, waveform L1, mel L2 and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .dsp import MelConfig, mel_spectrogram
from .tensor import Tensor, as_tensor, no_grad


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0          # latent (embedding) term
    beta: float = 500.0         # waveform L1 term
    gamma: float = 1.0 / 11.0   # mel term

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError(f"LossWeights must be non-negative: {self}")


ABLATIONS = {
    "all": lambda w: w,
    "emb_only": lambda w: LossWeights(w.alpha, 0.0, 0.0),
    "time_freq_only": lambda w: LossWeights(0.0, w.beta, w.gamma),
}


def ablation_weights(ablation: str, base: LossWeights = LossWeights()) -> LossWeights:
    try:
        return ABLATIONS[ablation](base)
    except KeyError:
        raise ValueError(f"unknown ablation {ablation!r}; choose from {sorted(ABLATIONS)}") from None


class LossBreakdown(NamedTuple):
    l_emb: Tensor
    l_time: Tensor
    l_freq: Tensor
    l_overall: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(v.data) for k, v in self._asdict().items()}


class Targets(NamedTuple):
    x_e: Tensor
    x_out: Tensor


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def emb_loss(x_e, y_h) -> Tensor:
    x_e, y_h = as_tensor(x_e), as_tensor(y_h)
    _same_shape(x_e, y_h, "emb_loss")
    return T.abs_mean(x_e - y_h)


def time_loss(x_out, y_out) -> Tensor:
    x_out, y_out = as_tensor(x_out), as_tensor(y_out)
    _same_shape(x_out, y_out, "time_loss")
    return T.abs_mean(x_out - y_out)


def freq_loss(x_out, y_out, mel: MelConfig = MelConfig()) -> Tensor:
    x_out, y_out = as_tensor(x_out), as_tensor(y_out)
    _same_shape(x_out, y_out, "freq_loss")
    if x_out.shape[-1] < mel.n_fft:
        raise ValueError(f"freq_loss: length {x_out.shape[-1]} shorter than one frame ({mel.n_fft})")
    return T.sq_mean(mel_spectrogram(x_out, mel) - mel_spectrogram(y_out, mel))


def overall_loss(l_emb, l_time, l_freq, w: LossWeights = LossWeights()) -> Tensor:
    return (as_tensor(l_emb) * w.alpha + as_tensor(l_time) * w.beta) + as_tensor(l_freq) * w.gamma


def make_targets(x_in, codec) -> Targets:
    """Clean latent x_e and codec-transmitted clean waveform x_out; never records gradients."""
    x_in = as_tensor(x_in)
    n = x_in.shape[-1]
    with no_grad():
        x_e = codec.encode(x_in.data)
        x_out = codec.decode(codec.quantize(x_e).quantized)
    return Targets(Tensor(x_e.data), Tensor(x_out.data[..., :n]))


def compute_losses(x_e, y_h, x_out, y_out, w: LossWeights = LossWeights(),
                   mel: MelConfig = MelConfig()) -> LossBreakdown:
    """All three terms and the weighted total. Terms with zero weight are still evaluated."""
    le = emb_loss(x_e, y_h)
    lt = time_loss(x_out, y_out)
    lf = freq_loss(x_out, y_out, mel)
    return LossBreakdown(le, lt, lf, overall_loss(le, lt, lf, w))


def mel_distance(a, b, mel: MelConfig = MelConfig()) -> float:
    with no_grad():
        return float(freq_loss(np.asarray(getattr(a, "data", a)), np.asarray(getattr(b, "data", b)), mel).data)
