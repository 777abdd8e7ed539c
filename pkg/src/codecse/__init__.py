"""Speech enhancement in the latent space of a frozen neural audio codec.

A small numpy autodiff engine, a miniature residual-VQ codec, a transformer
enhancement model operating on codec latents, the latent/waveform/mel training
objective, and tooling for MAC counting and real-time-factor measurement.
"""

from .codec import CodecConfig, CodecModel
from .data import DataConfig, SyntheticCorpus
from .dsp import MelConfig, si_snr
from .losses import LossWeights
from .pipeline import EnhancementPipeline
from .se_model import SEConfig, SEModel
from .tensor import Tape, Tensor, no_grad
from .trainer import TrainConfig, pretrain_codec, run_ablation, train_se

__version__ = "0.1.0"

__all__ = [
    "CodecConfig", "CodecModel", "DataConfig", "SyntheticCorpus", "MelConfig", "si_snr",
    "LossWeights", "EnhancementPipeline", "SEConfig", "SEModel", "Tape", "Tensor", "no_grad",
    "TrainConfig", "pretrain_codec", "run_ablation", "train_se",
]
