"""MAC accounting, real-time-factor timing and the latent vs time-domain comparison.

Counting conventions (multiply-accumulate pairs, integers):

* conv1d: C_in * C_out * k * T_out
* transposed conv1d: C_in * C_out * k * T_in (every input frame scatters one kernel)
* linear over T frames: C_in * C_out * T
* attention per block: 2 * T^2 * E for QK^T and AV, plus 4 * T * E^2 for the projections

Norms, activations, softmax and biases are not counted. Codec encode/decode
are shared by both pipelines and excluded from SE totals.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .nn import Conv1d, ConvTranspose1d, Linear, Module
from .pipeline import STAGES, EnhancementPipeline
from .se_model import SEConfig, SEModel, TransformerBlock, sinusoidal_positions
from .tensor import Tensor, as_tensor, no_grad

CSV_COLUMNS = ("duration_s", "model", "macs_total", "rtf_median", "rtf_mean")


@dataclass(frozen=True)
class MacEntry:
    layer: str
    kind: str
    macs: int


@dataclass
class MacReport:
    entries: list[MacEntry]
    input_duration: float
    frames: int

    @property
    def total(self) -> int:
        return sum(e.macs for e in self.entries)

    def by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.kind] = out.get(e.kind, 0) + e.macs
        return out

    def table(self) -> str:
        w = max([len(e.layer) for e in self.entries] + [5])
        lines = [f"{'layer':<{w}}  {'kind':<10}  {'MACs':>16}"]
        lines += [f"{e.layer:<{w}}  {e.kind:<10}  {e.macs:>16,d}" for e in self.entries]
        lines.append(f"{'total':<{w}}  {'':<10}  {self.total:>16,d}")
        return "\n".join(lines)


def conv_macs(layer: Conv1d, t_in: int, name: str) -> tuple[int, int]:
    """(MACs, T_out) for a conv over t_in frames."""
    c_out, c_in, k = layer.weight.shape
    t_out = (t_in + 2 * layer.padding - k) // layer.stride + 1
    if t_out < 1:
        raise ValueError(f"count_macs: layer {name!r} has no output frames for T_in={t_in} (k={k})")
    return c_in * c_out * k * t_out, t_out


def conv_transpose_macs(layer: ConvTranspose1d, t_in: int, name: str) -> tuple[int, int]:
    c_in, c_out, k = layer.weight.shape
    t_out = (t_in - 1) * layer.stride - 2 * layer.padding + k + layer.output_padding
    if t_in < 1 or t_out < 1:
        raise ValueError(f"count_macs: layer {name!r} cannot resolve T_in={t_in}")
    return c_in * c_out * k * t_in, t_out


def linear_macs(layer: Linear, t: int) -> int:
    n_in, n_out = layer.weight.shape
    return n_in * n_out * t


def _block_entries(blocks: Sequence[TransformerBlock], t: int, prefix: str = "blocks") -> list[MacEntry]:
    out = []
    for i, blk in enumerate(blocks):
        e = blk.attn.q.weight.shape[0]
        out.append(MacEntry(f"{prefix}.{i}.attn", "attention", 2 * t * t * e + 4 * t * e * e))
        out.append(MacEntry(f"{prefix}.{i}.ff1", "linear", linear_macs(blk.ff1, t)))
        out.append(MacEntry(f"{prefix}.{i}.ff2", "linear", linear_macs(blk.ff2, t)))
    return out


class TimeDomainBaseline(Module):
    """Transformer stack matched to an SE config, fed by a stride-8 conv front end on raw audio.

    Front end: conv 1 -> E, k=16, stride 8 (T = L/8). Back end: transposed conv
    E -> 1 with the same geometry. Used for MAC accounting and short-input timing.
    """

    STRIDE = 8
    KERNEL = 16

    def __init__(self, cfg: SEConfig = SEConfig()):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        pad = (self.KERNEL - self.STRIDE) // 2
        self.front = Conv1d(1, cfg.emb, self.KERNEL, rng, stride=self.STRIDE, padding=pad)
        self.blocks = [TransformerBlock(cfg.emb, cfg.n_heads, cfg.ffn_mult, rng) for _ in range(cfg.n_blocks)]
        self.back = ConvTranspose1d(cfg.emb, 1, self.KERNEL, rng, stride=self.STRIDE, padding=pad)

    def forward(self, wave) -> Tensor:
        w = as_tensor(wave)
        n = w.shape[-1]
        if n % self.STRIDE:
            w = T.pad_last(w, 0, (-n) % self.STRIDE)
        h = self.front(T.reshape(w, (1, 1, w.shape[-1])))          # [1, E, T]
        h = T.swapaxes(h, 1, 2)
        if self.config.positional:
            h = h + sinusoidal_positions(h.shape[1], self.config.emb)
        for blk in self.blocks:
            h = blk(h)
        y = self.back(T.swapaxes(h, 1, 2))
        return T.reshape(y, (y.shape[-1],))[:n]


def count_macs(model, input_len: int, sample_rate: int = 16000, hop: int = 320) -> MacReport:
    """Per-layer MACs for an SE model (on T = ceil(L/hop) latent frames) or the time-domain baseline."""
    if input_len < 1:
        raise ValueError(f"count_macs: input_len must be >= 1, got {input_len}")
    duration = input_len / sample_rate
    if isinstance(model, SEConfig):
        raise TypeError("count_macs: pass a constructed SEModel, not a config")
    if isinstance(model, SEModel):
        t = math.ceil(input_len / hop)
        entries = [MacEntry("in_proj", "linear", linear_macs(model.in_proj, t))]
        entries += _block_entries(model.blocks, t)
        mod = model.modulation
        m_gate, t_g = conv_macs(mod.conv_gate, t, "modulation.conv_gate")
        m_feat, t_f = conv_macs(mod.conv_feat, t, "modulation.conv_feat")
        if t_g != t or t_f != t:
            raise ValueError("count_macs: modulation convs must preserve T")
        entries += [MacEntry("modulation.conv_gate", "conv", m_gate),
                    MacEntry("modulation.conv_feat", "conv", m_feat),
                    MacEntry("out_proj", "linear", linear_macs(model.out_proj, t))]
        return MacReport(entries, duration, t)
    if isinstance(model, TimeDomainBaseline):
        padded = input_len + (-input_len) % model.STRIDE
        m_front, t = conv_macs(model.front, padded, "front")
        entries = [MacEntry("front", "conv", m_front)]
        entries += _block_entries(model.blocks, t)
        m_back, _ = conv_transpose_macs(model.back, t, "back")
        entries.append(MacEntry("back", "conv_t", m_back))
        return MacReport(entries, duration, t)
    raise TypeError(f"count_macs: unsupported model type {type(model).__name__}")


def closed_form_se_macs(cfg: SEConfig, latent_dim: int, t: int) -> int:
    """Hand-derived total for the SE layout; used as an independent check on count_macs."""
    e, d = cfg.emb, latent_dim
    block = 2 * t * t * e + 4 * t * e * e + 2 * cfg.ffn_mult * e * e * t
    return 2 * d * e * t + cfg.n_blocks * block + 2 * e * e * cfg.mod_kernel * t


@dataclass
class RtfResult:
    audio_seconds: float
    wall_seconds: float              # median over runs
    runs: list[float]
    stage_seconds: dict[str, float] = field(default_factory=dict)  # median per stage
    threads: int | None = 1

    @property
    def rtf(self) -> float:
        return self.wall_seconds / self.audio_seconds

    @property
    def rtf_mean(self) -> float:
        return statistics.fmean(self.runs) / self.audio_seconds

    @property
    def rtf_min(self) -> float:
        return min(self.runs) / self.audio_seconds

    @property
    def rtf_max(self) -> float:
        return max(self.runs) / self.audio_seconds

    @property
    def stage_total(self) -> float:
        return sum(self.stage_seconds.values())

    def summary(self) -> str:
        stages = ", ".join(f"{k} {v * 1e3:.1f} ms" for k, v in self.stage_seconds.items())
        mode = "single-threaded" if self.threads == 1 else f"threads={self.threads or 'default'}"
        return (f"RTF {self.rtf:.4f} (median of {len(self.runs)}, mean {self.rtf_mean:.4f}, "
                f"min {self.rtf_min:.4f}, max {self.rtf_max:.4f}; {mode})"
                + (f" | stages: {stages}" if stages else ""))


def _limits(threads: int | None):
    return threadpool_limits(threads) if threads else nullcontext()


def measure_rtf(pipeline, wave, runs: int = 5, sample_rate: int | None = None,
                threads: int | None = 1, warmup: int = 1) -> RtfResult:
    """Time ``pipeline`` on ``wave``; RTF = median wall time / audio duration.

    An EnhancementPipeline also yields a per-stage breakdown. Anything else
    callable on a waveform is timed end to end only. ``threads=None`` leaves
    BLAS threading alone (reported as multi-threaded).
    """
    if runs < 5:
        raise ValueError("measure_rtf: at least 5 runs are required")
    x = np.asarray(getattr(wave, "data", wave), dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("measure_rtf: empty input")
    sr = sample_rate or getattr(pipeline, "sample_rate", 16000)
    staged = isinstance(pipeline, EnhancementPipeline)
    walls, stages = [], {s: [] for s in STAGES}
    with _limits(threads), no_grad():
        for i in range(warmup + runs):
            t0 = time.perf_counter()
            res = pipeline.enhance(x) if staged else pipeline(x)
            dt = time.perf_counter() - t0
            if i < warmup:
                continue
            walls.append(dt)
            if staged:
                for s in STAGES:
                    stages[s].append(res.stage_seconds[s])
    stage_med = {s: statistics.median(v) for s, v in stages.items()} if staged else {}
    return RtfResult(x.shape[-1] / sr, statistics.median(walls), walls, stage_med, threads)


@dataclass
class EfficiencyRow:
    duration_s: float
    model: str
    macs_total: int
    rtf_median: float
    rtf_mean: float


def compare_efficiency(se_pipeline: EnhancementPipeline, baseline: TimeDomainBaseline,
                       durations: Iterable[float], runs: int = 5, threads: int | None = 1,
                       baseline_rtf_max_seconds: float = 1.0, seed: int = 0) -> list[EfficiencyRow]:
    """MAC totals and RTF for both pipelines at each duration.

    The baseline's attention matrix grows as (L/8)^2, so its RTF is only
    measured up to ``baseline_rtf_max_seconds``; longer rows report NaN.
    """
    sr = se_pipeline.sample_rate
    se = se_pipeline.se
    if se is None:
        raise ValueError("compare_efficiency: pipeline has no SE model")
    rng = np.random.default_rng(seed)
    rows = []
    for dur in durations:
        n = int(round(dur * sr))
        wave = 0.1 * rng.standard_normal(n)
        se_macs = count_macs(se, n, sr, se_pipeline.codec.hop).total
        base_macs = count_macs(baseline, n, sr).total
        r = measure_rtf(se_pipeline, wave, runs, sr, threads)
        rows.append(EfficiencyRow(dur, "latent_se", se_macs, r.rtf, r.rtf_mean))
        if dur <= baseline_rtf_max_seconds:
            rb = measure_rtf(baseline, wave, runs, sr, threads)
            rows.append(EfficiencyRow(dur, "time_domain", base_macs, rb.rtf, rb.rtf_mean))
        else:
            rows.append(EfficiencyRow(dur, "time_domain", base_macs, float("nan"), float("nan")))
    return rows


def mac_ratios(rows: Sequence[EfficiencyRow]) -> dict[float, float]:
    by = {}
    for r in rows:
        by.setdefault(r.duration_s, {})[r.model] = r.macs_total
    return {d: m["time_domain"] / m["latent_se"] for d, m in by.items()}


def efficiency_csv(rows: Sequence[EfficiencyRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([f"{r.duration_s:g}", r.model, r.macs_total, f"{r.rtf_median:.6g}", f"{r.rtf_mean:.6g}"])
    return buf.getvalue()


def efficiency_table(rows: Sequence[EfficiencyRow]) -> str:
    ratios = mac_ratios(rows)
    lines = [f"{'dur(s)':>7}  {'model':<12}  {'GMACs':>10}  {'RTF med':>9}  {'RTF mean':>9}"]
    for r in rows:
        lines.append(f"{r.duration_s:>7g}  {r.model:<12}  {r.macs_total / 1e9:>10.3f}  "
                     f"{r.rtf_median:>9.4f}  {r.rtf_mean:>9.4f}")
    lines += [f"MAC ratio (time_domain / latent_se) at {d:g} s: {q:.1f}x" for d, q in ratios.items()]
    return "\n".join(lines)
