"""Compiled elementwise kernels for the snake activation.

numpy's float64 sin is the bottleneck of codec training; these loops
evaluate sin and cos of the same argument together and keep the terms the
backward pass needs.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _snake_fwd(x, alpha, out, s2, sq):
    n, c, t = x.shape
    for i in range(n):
        for j in range(c):
            a = alpha[j]
            inv = 1.0 / a
            for k in range(t):
                v = a * x[i, j, k]
                s = math.sin(v)
                co = math.cos(v)
                sq[i, j, k] = s * s
                s2[i, j, k] = 2.0 * s * co
                out[i, j, k] = x[i, j, k] + s * s * inv


@numba.njit(cache=True)
def _snake_bwd(g, x, alpha, s2, sq, gx, ga, want_alpha):
    n, c, t = x.shape
    for j in range(c):
        a = alpha[j]
        acc = 0.0
        for i in range(n):
            for k in range(t):
                gx[i, j, k] = g[i, j, k] * (1.0 + s2[i, j, k])
                if want_alpha:
                    acc += g[i, j, k] * (x[i, j, k] * s2[i, j, k] / a - sq[i, j, k] / (a * a))
        ga[j] = acc


def snake_forward(x: np.ndarray, alpha: np.ndarray):
    out = np.empty_like(x)
    s2 = np.empty_like(x)
    sq = np.empty_like(x)
    _snake_fwd(x, np.ascontiguousarray(alpha, dtype=np.float64), out, s2, sq)
    return out, s2, sq


def snake_backward(g, x, alpha, s2, sq, want_alpha: bool):
    gx = np.empty_like(x)
    ga = np.zeros(x.shape[1])
    _snake_bwd(g, x, np.ascontiguousarray(alpha, dtype=np.float64), s2, sq, gx, ga, want_alpha)
    return gx, ga


@numba.njit(cache=True)
def _im2col(xp, k, stride, tout, cols):
    bsz, c, _ = xp.shape
    for b in range(bsz):
        for ch in range(c):
            for t in range(tout):
                base = t * stride
                for j in range(k):
                    cols[b, t, ch, j] = xp[b, ch, base + j]


@numba.njit(cache=True)
def _col2im(cols, stride, out):
    bsz, tout, c, k = cols.shape
    for b in range(bsz):
        for ch in range(c):
            for t in range(tout):
                base = t * stride
                for j in range(k):
                    out[b, ch, base + j] += cols[b, t, ch, j]


def im2col(xp: np.ndarray, k: int, stride: int, tout: int) -> np.ndarray:
    """[B, C, Tp] -> [B, T_out, C, k] windows starting every ``stride`` samples."""
    cols = np.empty((xp.shape[0], tout, xp.shape[1], k))
    _im2col(np.ascontiguousarray(xp), k, stride, tout, cols)
    return cols


def col2im(cols: np.ndarray, stride: int, length: int) -> np.ndarray:
    """Adjoint of im2col: overlap-add [B, T_out, C, k] windows into [B, C, length]."""
    out = np.zeros((cols.shape[0], cols.shape[2], length))
    _col2im(np.ascontiguousarray(cols), stride, out)
    return out
