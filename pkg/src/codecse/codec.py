"""Miniature DAC-style codec: strided conv encoder, residual VQ, transposed-conv decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .nn import Conv1d, ConvTranspose1d, Module, Snake, parameter
from .tensor import Tensor, as_tensor


@dataclass
class CodecConfig:
    sample_rate: int = 16000
    strides: list[int] = field(default_factory=lambda: [2, 4, 5, 8])
    base_channels: int = 8
    latent_dim: int = 64
    n_codebooks: int = 4
    codebook_size: int = 64
    snake_alpha_init: float = 1.0
    # pretraining objective weights
    commit_weight: float = 0.25
    recon_time_weight: float = 10.0
    recon_mel_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.strides = [int(s) for s in self.strides]
        if not self.strides or any(s < 1 for s in self.strides):
            raise ValueError(f"CodecConfig: strides must be positive, got {self.strides}")
        if self.latent_dim < 1 or self.n_codebooks < 1 or self.codebook_size < 2:
            raise ValueError("CodecConfig: need latent_dim >= 1, n_codebooks >= 1, codebook_size >= 2")
        if self.base_channels < 1:
            raise ValueError("CodecConfig: base_channels must be >= 1")

    @property
    def hop(self) -> int:
        return math.prod(self.strides)


class ResidualUnit(Module):
    """snake -> conv(k=7) -> snake -> conv(k=1), added back onto the input."""

    def __init__(self, ch: int, rng: np.random.Generator, alpha: float):
        self.act1 = Snake(ch, alpha)
        self.conv1 = Conv1d(ch, ch, 7, rng, padding=3)
        self.act2 = Snake(ch, alpha)
        self.conv2 = Conv1d(ch, ch, 1, rng)
        self.conv2.weight.data *= 0.1  # start close to identity

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(self.act2(self.conv1(self.act1(x))))


class Encoder(Module):
    """conv_in, then per stride: snake -> strided conv (channels x2) -> residual unit."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        ch = cfg.base_channels
        a = cfg.snake_alpha_init
        self.conv_in = Conv1d(1, ch, 7, rng, padding=3)
        self.res = []
        self.acts = []
        self.downs = []
        for s in cfg.strides:
            self.acts.append(Snake(ch, a))
            # k = 2s with padding ceil(s/2) maps T -> T/s exactly
            self.downs.append(Conv1d(ch, 2 * ch, 2 * s, rng, stride=s, padding=(s + 1) // 2))
            ch *= 2
            self.res.append(ResidualUnit(ch, rng, a))
        self.act_out = Snake(ch, a)
        self.conv_out = Conv1d(ch, cfg.latent_dim, 3, rng, padding=1)

    def forward(self, wave: Tensor) -> Tensor:
        h = self.conv_in(wave)
        for act, down, res in zip(self.acts, self.downs, self.res):
            h = res(down(act(h)))
        return self.conv_out(self.act_out(h))


class Decoder(Module):
    """Mirror of the encoder: residual unit -> snake -> transposed conv (channels /2) per stride."""

    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        a = cfg.snake_alpha_init
        ch = cfg.base_channels * 2 ** len(cfg.strides)
        self.conv_in = Conv1d(cfg.latent_dim, ch, 7, rng, padding=3)
        self.acts = []
        self.ups = []
        self.res = []
        for s in reversed(cfg.strides):
            self.res.append(ResidualUnit(ch, rng, a))
            self.acts.append(Snake(ch, a))
            self.ups.append(ConvTranspose1d(ch, ch // 2, 2 * s, rng, stride=s,
                                            padding=(s + 1) // 2, output_padding=s % 2))
            ch //= 2
        self.act_out = Snake(ch, a)
        self.conv_out = Conv1d(ch, 1, 7, rng, padding=3)
        self.conv_out.weight.data *= 0.1  # keep tanh out of saturation at init

    def forward(self, latent: Tensor) -> Tensor:
        h = self.conv_in(latent)
        for res, act, up in zip(self.res, self.acts, self.ups):
            h = up(act(res(h)))
        return T.tanh(self.conv_out(self.act_out(h)))


class QuantizeResult(NamedTuple):
    quantized: Tensor        # straight-through w.r.t. the input latent
    codes: np.ndarray        # [N_q, T] or [B, N_q, T]
    commit_loss: Tensor      # mean ||latent - sg(quantized)||^2 per element
    codebook_loss: Tensor    # mean ||sg(latent) - quantized||^2 per element


class ResidualVQ(Module):
    """Greedy residual vector quantizer.

    Index 0 of every codebook is a fixed all-zeros codeword, so each stage can
    always leave the residual unchanged; only codewords 1..K-1 are learnable.
    """

    def __init__(self, n_codebooks: int, codebook_size: int, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.codebook_size = codebook_size
        self.codewords = [parameter(rng.normal(0.0, 1.0, (codebook_size - 1, dim)))
                          for _ in range(n_codebooks)]

    @property
    def n_codebooks(self) -> int:
        return len(self.codewords)

    def codebook(self, stage: int) -> np.ndarray:
        return np.concatenate([np.zeros((1, self.dim)), self.codewords[stage].data])

    def _full(self, stage: int) -> Tensor:
        return T.concat([Tensor(np.zeros((1, self.dim))), self.codewords[stage]], axis=0)

    def encode_frames(self, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        """Greedy code search for [N, D] frames; returns codes [N_q, N], quantized [N, D], residuals."""
        r = np.asarray(frames, dtype=np.float64)
        q = np.zeros_like(r)
        codes = np.empty((self.n_codebooks, r.shape[0]), dtype=np.int64)
        residuals = [r]
        for i in range(self.n_codebooks):
            cb = self.codebook(i)
            d = ((r[:, None, :] - cb[None, :, :]) ** 2).sum(-1)
            idx = np.argmin(d, axis=1)  # first minimum wins ties
            codes[i] = idx
            q = q + cb[idx]
            r = r - cb[idx]
            residuals.append(r)
        return codes, q, residuals

    def decode_codes(self, codes: np.ndarray) -> np.ndarray:
        """Sum of selected codewords; codes [N_q, T] -> [D, T] or [B, N_q, T] -> [B, D, T]."""
        codes = np.asarray(codes, dtype=np.int64)
        batched = codes.ndim == 3
        c = codes if batched else codes[None]
        bsz, nq, t = c.shape
        q = np.zeros((bsz * t, self.dim))
        for i in range(nq):
            q = q + self.codebook(i)[c[:, i, :].reshape(-1)]
        out = q.reshape(bsz, t, self.dim).transpose(0, 2, 1)
        return out if batched else out[0]

    def forward(self, latent: Tensor) -> QuantizeResult:
        latent = as_tensor(latent)
        if latent.shape[-2] != self.dim:
            raise ValueError(f"quantize: latent has {latent.shape[-2]} channels, codebooks have D={self.dim}")
        batched = latent.ndim == 3
        x = latent.data if batched else latent.data[None]
        bsz, d, t = x.shape
        frames = x.transpose(0, 2, 1).reshape(bsz * t, d)
        codes, q, _ = self.encode_frames(frames)
        qdata = np.ascontiguousarray(q.reshape(bsz, t, d).transpose(0, 2, 1))
        codes = codes.reshape(self.n_codebooks, bsz, t).transpose(1, 0, 2)
        if not batched:
            qdata, codes = qdata[0], codes[0]
        quantized = T.straight_through(latent, qdata)
        commit = T.sq_mean(latent - Tensor(qdata))
        if any(c.requires_grad for c in self.codewords):
            qsum = None
            for i in range(self.n_codebooks):
                picked = T.take_rows(self._full(i), codes[..., i, :] if batched else codes[i])
                qsum = picked if qsum is None else qsum + picked
            target = Tensor(x.transpose(0, 2, 1) if batched else x[0].T)
            book = T.sq_mean(target - qsum)
        else:
            book = Tensor(np.array(0.0))
        return QuantizeResult(quantized, codes, commit, book)

    def restart_dead(self, frames: np.ndarray, hits: np.ndarray, rng: np.random.Generator) -> int:
        """Re-seed learnable codewords with zero hits from residuals of ``frames``.

        ``hits`` is [N_q, K] usage counts (column 0 is the frozen zero codeword).
        Returns the number of codewords replaced.
        """
        _, _, residuals = self.encode_frames(frames)
        replaced = 0
        for i in range(self.n_codebooks):
            dead = np.flatnonzero(hits[i, 1:] == 0)
            if dead.size == 0:
                continue
            r = residuals[i]
            pick = rng.choice(r.shape[0], size=dead.size, replace=r.shape[0] < dead.size)
            self.codewords[i].data[dead] = r[pick]
            replaced += dead.size
        return replaced

    def init_from_frames(self, frames: np.ndarray, rng: np.random.Generator) -> None:
        """Seed learnable codewords with residual vectors sampled from data frames."""
        r = np.asarray(frames, dtype=np.float64)
        for i in range(self.n_codebooks):
            pick = rng.choice(r.shape[0], size=self.codebook_size - 1, replace=r.shape[0] < self.codebook_size - 1)
            self.codewords[i].data[...] = r[pick]
            cb = self.codebook(i)
            idx = np.argmin(((r[:, None, :] - cb[None]) ** 2).sum(-1), axis=1)
            r = r - cb[idx]


def pad_to_multiple(wave: np.ndarray, hop: int) -> np.ndarray:
    """Right-pad the last axis with zeros to the next multiple of ``hop``."""
    n = wave.shape[-1]
    if n == 0:
        raise ValueError("empty waveform")
    extra = (-n) % hop
    if not extra:
        return wave
    width = [(0, 0)] * (wave.ndim - 1) + [(0, extra)]
    return np.pad(wave, width)


class CodecModel(Module):
    def __init__(self, cfg: CodecConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(cfg, rng)
        self.quantizer = ResidualVQ(cfg.n_codebooks, cfg.codebook_size, cfg.latent_dim, rng)
        self.decoder = Decoder(cfg, rng)

    @property
    def hop(self) -> int:
        return self.config.hop

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def freeze(self) -> "CodecModel":
        return self.requires_grad_(False)

    def encode(self, wave) -> Tensor:
        """[L] -> [D, ceil(L/S)] or [B, L] -> [B, D, ceil(L/S)]; input is right-padded to a multiple of S."""
        w = as_tensor(wave)
        if w.size == 0 or w.shape[-1] == 0:
            raise ValueError("encode: empty input")
        if w.ndim not in (1, 2):
            raise ValueError(f"encode: expected [L] or [B, L], got shape {w.shape}")
        if w.shape[-1] % self.hop:
            w = T.pad_last(w, 0, (-w.shape[-1]) % self.hop)
        x = T.reshape(w, (1, w.shape[-1]) if w.ndim == 1 else (w.shape[0], 1, w.shape[-1]))
        return self.encoder(x)

    def quantize(self, latent) -> QuantizeResult:
        return self.quantizer(latent)

    def decode(self, quantized) -> Tensor:
        """[D, T] -> [T*S] or [B, D, T] -> [B, T*S], bounded to [-1, 1] by tanh."""
        q = as_tensor(quantized)
        if q.ndim not in (2, 3) or q.shape[-2] != self.latent_dim:
            raise ValueError(f"decode: expected [D={self.latent_dim}, T] input, got shape {q.shape}")
        y = self.decoder(q)
        return T.reshape(y, (y.shape[-1],) if q.ndim == 2 else (y.shape[0], y.shape[-1]))

    def reconstruct(self, wave) -> tuple[Tensor, QuantizeResult]:
        n = as_tensor(wave).shape[-1]
        res = self.quantize(self.encode(wave))
        out = self.decode(res.quantized)
        return out[..., :n] if out.shape[-1] != n else out, res
