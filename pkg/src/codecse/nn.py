"""Parameter containers and the handful of layers the codec and SE model share."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Attribute-driven parameter registry.

    Parameters are discovered by walking instance attributes in definition
    order, so names are stable across runs and match checkpoint manifests.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """y = x W + b over the last axis; W is [in, out]."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        scale = 0.0 if zero else 1.0 / np.sqrt(n_in)
        self.n_in, self.n_out = n_in, n_out
        self.weight = parameter(rng.normal(0.0, 1.0, (n_in, n_out)) * scale)
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        self.stride, self.padding, self.k = stride, padding, k
        self.c_in, self.c_out = c_in, c_out
        self.weight = parameter(rng.normal(0.0, 1.0 / np.sqrt(c_in * k), (c_out, c_in, k)))
        self.bias = parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)

    def out_len(self, t: int) -> int:
        return (t + 2 * self.padding - self.k) // self.stride + 1


class ConvTranspose1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, output_padding: int = 0):
        self.stride, self.padding, self.k, self.output_padding = stride, padding, k, output_padding
        self.c_in, self.c_out = c_in, c_out
        # fan-in of each output sample is c_in * k / stride taps
        std = 1.0 / np.sqrt(max(c_in * k // stride, 1))
        self.weight = parameter(rng.normal(0.0, std, (c_in, c_out, k)))
        self.bias = parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)

    def out_len(self, t: int) -> int:
        return (t - 1) * self.stride - 2 * self.padding + self.k + self.output_padding


class Snake(Module):
    def __init__(self, channels: int, alpha_init: float = 1.0):
        self.alpha = parameter(np.full(channels, float(alpha_init)))

    def forward(self, x: Tensor) -> Tensor:
        return T.snake(x, self.alpha)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.weight = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)
