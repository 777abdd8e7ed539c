"""Latent-space enhancement network.

Layout: input projection D -> E, sinusoidal positions, a stack of pre-norm
transformer blocks, the gated modulation block, output projection E -> D.
Inputs and outputs are codec latents [D, T] (or [B, D, T]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv1d, Linear, LayerNorm, Module, Snake
from .tensor import Tensor, as_tensor


@dataclass
class SEConfig:
    n_blocks: int = 8
    emb: int = 256
    n_heads: int = 4
    ffn_mult: int = 4
    mod_kernel: int = 3
    positional: bool = True
    seed: int = 1

    def __post_init__(self):
        if self.emb % self.n_heads:
            raise ValueError(f"SEConfig: emb={self.emb} not divisible by n_heads={self.n_heads}")
        if self.mod_kernel % 2 != 1:
            raise ValueError("SEConfig: mod_kernel must be odd for same-length padding")
        if self.n_blocks < 0 or self.ffn_mult < 1:
            raise ValueError("SEConfig: n_blocks >= 0 and ffn_mult >= 1 required")


def sinusoidal_positions(t: int, dim: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(dim // 2)[None]
    ang = pos / 10000.0 ** (2 * i / dim)
    pe = np.zeros((t, dim))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : dim - dim // 2])
    return pe


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        # q/k/v carry no bias: a key bias has an identically zero gradient
        self.q = Linear(dim, dim, rng, bias=False)
        self.k = Linear(dim, dim, rng, bias=False)
        self.v = Linear(dim, dim, rng, bias=False)
        self.out = Linear(dim, dim, rng)

    def weights(self, x: Tensor) -> Tensor:
        return self._attend(x)[1]

    def _split(self, x: Tensor) -> Tensor:
        b, t, e = x.shape
        return T.transpose(T.reshape(x, (b, t, self.heads, e // self.heads)), (0, 2, 1, 3))

    def _attend(self, x: Tensor) -> tuple[Tensor, Tensor]:
        b, t, e = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(e // self.heads))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, e))
        return self.out(ctx), attn

    def forward(self, x: Tensor) -> Tensor:
        return self._attend(x)[0]


class TransformerBlock(Module):
    """x + Attn(LN(x)), then + FFN(LN(.)); operates on [B, T, E]."""

    def __init__(self, dim: int, heads: int, ffn_mult: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ffn_mult * dim, rng)
        self.ff2 = Linear(ffn_mult * dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff2(T.gelu(self.ff1(self.norm2(x))))


class ModulationBlock(Module):
    """snake(sigmoid(conv_gate(x)) * snake(conv_feat(x))) on [B, E, T]."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator):
        pad = kernel // 2
        self.conv_gate = Conv1d(dim, dim, kernel, rng, padding=pad)
        self.conv_feat = Conv1d(dim, dim, kernel, rng, padding=pad)
        self.act_feat = Snake(dim)
        self.act_out = Snake(dim)

    def forward(self, x: Tensor) -> Tensor:
        gate = T.sigmoid(self.conv_gate(x))
        return self.act_out(gate * self.act_feat(self.conv_feat(x)))


class SEModel(Module):
    def __init__(self, cfg: SEConfig, latent_dim: int):
        self.config = cfg
        self.latent_dim = latent_dim
        rng = np.random.default_rng(cfg.seed)
        self.in_proj = Linear(latent_dim, cfg.emb, rng)
        self.blocks = [TransformerBlock(cfg.emb, cfg.n_heads, cfg.ffn_mult, rng)
                       for _ in range(cfg.n_blocks)]
        self.modulation = ModulationBlock(cfg.emb, cfg.mod_kernel, rng)
        self.out_proj = Linear(cfg.emb, latent_dim, rng)

    def forward(self, latent) -> Tensor:
        """y_e [D, T] or [B, D, T] -> y_h of the same shape."""
        x = as_tensor(latent)
        if x.ndim not in (2, 3):
            raise ValueError(f"SEModel: expected [D, T] or [B, D, T], got shape {x.shape}")
        if x.shape[-2] != self.latent_dim:
            raise ValueError(f"SEModel: input has {x.shape[-2]} channels, model expects D={self.latent_dim}")
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        t = x.shape[-1]
        h = self.in_proj(T.swapaxes(x, 1, 2))                  # [B, T, E]
        if self.config.positional:
            h = h + sinusoidal_positions(t, self.config.emb)
        for block in self.blocks:
            h = block(h)
        h = self.modulation(T.swapaxes(h, 1, 2))               # [B, E, T]
        y = T.swapaxes(self.out_proj(T.swapaxes(h, 1, 2)), 1, 2)
        return T.reshape(y, y.shape[1:]) if squeeze else y
