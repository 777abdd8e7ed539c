"""Adam, codec pretraining, frozen-codec SE training and the loss ablation."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .checkpoint import snap_to_storage
from .codec import CodecConfig, CodecModel
from .data import Batch, SyntheticCorpus, heldout_set
from .dsp import MelConfig, si_snr
from .losses import (ABLATIONS, LossWeights, ablation_weights, emb_loss, freq_loss,
                     mel_distance, overall_loss, time_loss)
from .nn import Module
from .pipeline import EnhancementPipeline
from .se_model import SEConfig, SEModel
from .tensor import Tape, Tensor, no_grad

log = logging.getLogger(__name__)

LOSS_KEYS = ("l_emb", "l_time", "l_freq", "l_overall")

# The reference beta=500 balances a waveform L1 of ~0.002 from a large pretrained
# codec. The desk codec's waveform L1 sits near 0.05-0.1, so beta is scaled down
# 50x to keep the terms comparable; at 500 the straight-through gradient of the
# time term drags the latent away from every codeword and l_emb diverges.
DESK_WEIGHTS = LossWeights(alpha=1.0, beta=10.0, gamma=1.0 / 11.0)


@dataclass
class TrainConfig:
    lr: float = 1.5e-4
    epochs: int = 70
    batch_size: int = 4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: str = "all"
    grad_clip: float | None = None
    lr_schedule: str = "constant"
    checkpoint_every: int = 0
    codec_epochs: int = 30
    codec_lr: float = 3e-4

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.lr <= 0 or self.codec_lr <= 0:
            raise ValueError("TrainConfig: learning rates must be > 0")
        if self.epochs < 0 or self.codec_epochs < 0:
            raise ValueError("TrainConfig: epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"TrainConfig: ablation must be one of {sorted(ABLATIONS)}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("TrainConfig: lr_schedule must be 'constant' or 'cosine'")

    def lr_at(self, epoch: int, base: float | None = None) -> float:
        base = self.lr if base is None else base
        if self.lr_schedule == "cosine" and self.epochs > 0:
            return base * 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))
        return base


class TrainingDiverged(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction over a fixed set of named parameters."""

    def __init__(self, params: Iterable[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros(p.shape) for n, p in self.params}
        self.v = {n: np.zeros(p.shape) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params:
            g = np.zeros(p.shape) if p.grad is None else p.grad
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm > 0:
        for g in grads:
            g *= max_norm / norm
    return norm


def state_digest(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()


def _check_finite(value: float, what: str, epoch: int) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite at epoch {epoch}")


# codec pretraining

def codec_losses(codec: CodecModel, clean: np.ndarray, mel: MelConfig,
                 extras: dict | None = None) -> dict[str, Tensor]:
    cfg = codec.config
    n = clean.shape[-1]
    z = codec.encode(clean)
    res = codec.quantize(z)
    y = codec.decode(res.quantized)
    if y.shape[-1] != n:
        y = y[..., :n]
    if extras is not None:
        extras["latent"] = z.data
        extras["codes"] = res.codes
    lt = time_loss(clean, y)
    lm = freq_loss(clean, y, mel)
    total = (lt * cfg.recon_time_weight + lm * cfg.recon_mel_weight
             + res.commit_loss * cfg.commit_weight + res.codebook_loss)
    return {"l_time": lt, "l_mel": lm, "l_commit": res.commit_loss,
            "l_codebook": res.codebook_loss, "l_total": total}


def evaluate_codec(codec: CodecModel, corpus: SyntheticCorpus, mel: MelConfig,
                   batch_size: int = 4) -> dict[str, float]:
    sums: dict[str, float] = {}
    n = 0
    with no_grad():
        for batch in corpus.validation(batch_size):
            parts = codec_losses(codec, batch.clean, mel)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.data) * len(batch.clean)
            n += len(batch.clean)
    return {k: v / max(n, 1) for k, v in sums.items()}


def _frames(latent: np.ndarray) -> np.ndarray:
    return latent.transpose(0, 2, 1).reshape(-1, latent.shape[1])


def pretrain_codec(config: CodecConfig, corpus: SyntheticCorpus, epochs: int,
                   lr: float = 3e-4, batch_size: int = 4, seed: int = 0,
                   mel: MelConfig = MelConfig(), restart_every: int = 10,
                   on_epoch: Callable[[dict], None] | None = None) -> tuple[CodecModel, list[dict]]:
    """Train a codec on clean audio with waveform L1 + mel L2 + VQ losses.

    Returns the model (parameters rounded to checkpoint precision) and one
    history row per epoch; row 0 is the untrained model. Every
    ``restart_every`` steps, codewords that went unused in that window are
    re-seeded from current residuals (0 disables this).
    """
    codec = CodecModel(config)
    if not len(corpus.train_ids):
        raise ValueError("pretrain_codec: corpus has no training utterances")
    history = [{"epoch": 0, **_prefix(evaluate_codec(codec, corpus, mel, batch_size), "val_")}]
    if epochs == 0:
        return codec, history
    rng = np.random.default_rng(seed)
    first = next(corpus.batches(0, batch_size * 4))
    with no_grad():
        lat = codec.encode(first.clean).data
    vq = codec.quantizer
    vq.init_from_frames(_frames(lat), rng)
    opt = Adam(codec.named_parameters(), lr)
    hits = np.zeros((vq.n_codebooks, vq.codebook_size), dtype=np.int64)
    window: list[np.ndarray] = []
    step = 0
    for epoch in range(1, epochs + 1):
        sums: dict[str, float] = {}
        steps = 0
        for batch in corpus.batches(epoch, batch_size):
            opt.zero_grad()
            extras: dict = {}
            with Tape() as tape:
                parts = codec_losses(codec, batch.clean, mel, extras)
            total = float(parts["l_total"].data)
            _check_finite(total, "codec loss", epoch)
            tape.backward(parts["l_total"])
            opt.step()
            step += 1
            if restart_every:
                codes = extras["codes"]
                for i in range(vq.n_codebooks):
                    hits[i] += np.bincount(codes[:, i].ravel(), minlength=vq.codebook_size)
                window.append(_frames(extras["latent"]))
                if step % restart_every == 0:
                    vq.restart_dead(np.concatenate(window), hits, rng)
                    hits[:] = 0
                    window.clear()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.data)
            steps += 1
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()},
               **_prefix(evaluate_codec(codec, corpus, mel, batch_size), "val_")}
        history.append(row)
        log.info("codec epoch %d: %s", epoch, _fmt(row))
        if on_epoch:
            on_epoch(row)
    snap_to_storage({n: p.data for n, p in codec.named_parameters()})
    return codec, history


def _prefix(d: dict, p: str) -> dict:
    return {p + k: v for k, v in d.items()}


def _fmt(row: dict) -> str:
    return " ".join(f"{k}={v:.4g}" for k, v in row.items() if k != "epoch")


# SE training

class TargetCache:
    """Frozen-codec targets (x_e, x_out) keyed by the clean waveform bytes."""

    def __init__(self, codec: CodecModel, max_entries: int = 4096):
        self.codec = codec
        self.max_entries = max_entries
        self._store: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, clean: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        keys = [hashlib.sha1(row.tobytes()).digest() for row in clean]
        missing = [i for i, k in enumerate(keys) if k not in self._store]
        if missing:
            n = clean.shape[-1]
            with no_grad():
                x_e = self.codec.encode(clean[missing])
                x_out = self.codec.decode(self.codec.quantize(x_e).quantized)
            fresh = {keys[i]: (x_e.data[j].copy(), x_out.data[j, :n].copy())
                     for j, i in enumerate(missing)}
            if len(self._store) < self.max_entries:
                self._store.update(fresh)
        else:
            fresh = {}
        pairs = [fresh.get(k) or self._store[k] for k in keys]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def se_step_losses(se: SEModel, codec: CodecModel, y_e: np.ndarray, x_e: np.ndarray,
                   x_out: np.ndarray, w: LossWeights, mel: MelConfig) -> dict[str, Tensor]:
    """Forward one batch. Terms whose weight is zero are evaluated off the tape."""
    n = x_out.shape[-1]
    y_h = se(Tensor(y_e))
    l_emb = emb_loss(x_e, y_h)
    if w.beta > 0 or w.gamma > 0:
        y_out = codec.decode(codec.quantize(y_h).quantized)
    else:
        with no_grad():
            y_out = codec.decode(codec.quantize(y_h.data).quantized)
    if y_out.shape[-1] != n:
        y_out = y_out[..., :n]
    l_time = time_loss(x_out, y_out)
    l_freq = freq_loss(x_out, y_out, mel)
    if w.alpha == 0:
        l_emb = Tensor(l_emb.data)
    total = overall_loss(l_emb, l_time, l_freq, w)
    return {"l_emb": l_emb, "l_time": l_time, "l_freq": l_freq, "l_overall": total}


def validate_se(se: SEModel, codec: CodecModel, corpus: SyntheticCorpus, cache: TargetCache,
                w: LossWeights, mel: MelConfig, batch_size: int = 4) -> dict[str, float]:
    sums = dict.fromkeys(LOSS_KEYS, 0.0)
    n = 0
    with no_grad():
        for batch in corpus.validation(batch_size):
            y_e = codec.encode(batch.noisy).data
            x_e, x_out = cache(batch.clean)
            parts = se_step_losses(se, codec, y_e, x_e, x_out, w, mel)
            for k in LOSS_KEYS:
                sums[k] += float(parts[k].data) * len(batch.clean)
            n += len(batch.clean)
    return {k: v / max(n, 1) for k, v in sums.items()}


@dataclass
class SEHistory:
    train: list[dict] = field(default_factory=list)
    val: list[dict] = field(default_factory=list)

    @property
    def initial_val(self) -> dict:
        return self.val[0]

    @property
    def final_val(self) -> dict:
        return self.val[-1]


def train_se(codec: CodecModel, se: SEModel, corpus: SyntheticCorpus, cfg: TrainConfig,
             mel: MelConfig = MelConfig(), out_dir: str | Path | None = None,
             cache: TargetCache | None = None,
             save: Callable[[SEModel, Path], None] | None = None) -> tuple[SEModel, SEHistory]:
    """Optimise only the SE parameters against the frozen codec.

    Validation row 0 is measured before any update. When ``out_dir`` and
    ``save`` are given, periodic and best-validation snapshots are written.
    """
    codec.freeze()
    before = state_digest(codec)
    w = ablation_weights(cfg.ablation, cfg.weights)
    cache = cache or TargetCache(codec)
    history = SEHistory()
    history.val.append({"epoch": 0, **validate_se(se, codec, corpus, cache, w, mel, cfg.batch_size)})
    opt = Adam(se.named_parameters(), cfg.lr)
    best = history.val[0]["l_overall"]
    out = Path(out_dir) if out_dir is not None else None
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch - 1)
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        steps = 0
        for batch in corpus.batches(epoch, cfg.batch_size):
            with no_grad():
                y_e = codec.encode(batch.noisy).data
            x_e, x_out = cache(batch.clean)
            opt.zero_grad()
            with Tape() as tape:
                parts = se_step_losses(se, codec, y_e, x_e, x_out, w, mel)
            total = float(parts["l_overall"].data)
            _check_finite(total, "SE loss", epoch)
            tape.backward(parts["l_overall"])
            if cfg.grad_clip:
                clip_grad_norm(se.parameters(), cfg.grad_clip)
            opt.step(lr)
            for k in LOSS_KEYS:
                sums[k] += float(parts[k].data)
            steps += 1
        history.train.append({"epoch": epoch, **{k: v / max(steps, 1) for k, v in sums.items()}})
        val = {"epoch": epoch, **validate_se(se, codec, corpus, cache, w, mel, cfg.batch_size)}
        history.val.append(val)
        log.info("SE[%s] epoch %d: train %s | val %s", cfg.ablation, epoch,
                 _fmt(history.train[-1]), _fmt(val))
        if out is not None and save is not None:
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save(se, out / f"se_epoch{epoch:03d}.ckpt")
            if val["l_overall"] < best:
                best = val["l_overall"]
                save(se, out / "se_best.ckpt")
    if state_digest(codec) != before:
        raise RuntimeError("codec parameters changed during SE training")
    if cfg.epochs:
        snap_to_storage({n: p.data for n, p in se.named_parameters()})
    return se, history


# evaluation and ablation

def heldout_metrics(pipeline: EnhancementPipeline, pairs, mel: MelConfig = MelConfig()) -> list[dict]:
    """Per-utterance SI-SNR (vs the codec-transmitted clean x_out), mel distance and latent L1."""
    cache = TargetCache(pipeline.codec)
    rows = []
    for p in pairs:
        x_e, x_out = cache(p.clean[None])
        res = pipeline.enhance(p.noisy)
        ref = x_out[0]
        s_noisy = si_snr(ref, p.noisy)
        s_enh = si_snr(ref, res.y_out)
        rows.append({
            "si_snr_noisy": s_noisy,
            "si_snr_enhanced": s_enh,
            "si_snr_improvement": s_enh - s_noisy,
            "mel_distance": mel_distance(ref, res.y_out, mel),
            "latent_l1": float(np.mean(np.abs(x_e[0] - res.y_h))),
        })
    return rows


ABLATION_ARMS = ("emb_only", "time_freq_only", "all")


def run_ablation(codec: CodecModel, corpus: SyntheticCorpus, cfg: TrainConfig,
                 se_cfg: SEConfig, mel: MelConfig = MelConfig(), heldout: list | None = None,
                 arms: Iterable[str] = ABLATION_ARMS) -> tuple[list[dict], dict]:
    """Train one SE model per loss configuration from identical initial weights.

    Returns (table rows, {arm: (model, history)}).
    """
    if heldout is None:
        heldout = heldout_set(50, corpus.cfg)
    cache = TargetCache(codec)
    rows, runs = [], {}
    for arm in arms:
        se = SEModel(se_cfg, codec.latent_dim)
        arm_cfg = TrainConfig(**{**cfg.__dict__, "ablation": arm})
        se, hist = train_se(codec, se, corpus, arm_cfg, mel, cache=cache)
        metrics = heldout_metrics(EnhancementPipeline(codec, se), heldout, mel)
        rows.append({
            "arm": arm,
            "val_l_emb_initial": hist.initial_val["l_emb"],
            "val_l_emb_final": hist.final_val["l_emb"],
            "val_l_time_final": hist.final_val["l_time"],
            "val_l_freq_final": hist.final_val["l_freq"],
            "si_snr_improvement_median": float(np.median([m["si_snr_improvement"] for m in metrics])),
            "mel_distance_mean": float(np.mean([m["mel_distance"] for m in metrics])),
        })
        runs[arm] = (se, hist)
    return rows, runs
