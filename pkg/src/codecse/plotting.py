"""Report figures, rendered off-screen to PNG next to the CSV they summarise."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=110, bbox_inches="tight", metadata={"Software": None})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)
    return path


def plot_loss_curves(train: Sequence[dict], val: Sequence[dict], path, title: str = "SE training") -> Path:
    keys = ("l_emb", "l_time", "l_freq", "l_overall")
    fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.2))
    for ax, k in zip(axes, keys):
        if train:
            ax.plot([r["epoch"] for r in train], [r[k] for r in train], label="train")
        if val:
            ax.plot([r["epoch"] for r in val], [r[k] for r in val], "o-", ms=3, label="validation")
        ax.set_title(k)
        ax.set_xlabel("epoch")
        ax.set_yscale("log")
        ax.grid(alpha=0.3)
    axes[0].legend()
    fig.suptitle(title)
    return _save(fig, path)


def plot_codec_history(history: Sequence[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ep = [r["epoch"] for r in history]
    for k in ("val_l_time", "val_l_mel", "val_l_commit"):
        if all(k in r for r in history):
            ax.plot(ep, [r[k] for r in history], "o-", ms=3, label=k.replace("val_", ""))
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_title("codec pretraining (validation)")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_ablation(rows: Sequence[dict], path) -> Path:
    arms = [r["arm"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    x = range(len(arms))
    w = 0.38
    axes[0].bar([i - w / 2 for i in x], [r["val_l_emb_initial"] for r in rows], w, label="initial")
    axes[0].bar([i + w / 2 for i in x], [r["val_l_emb_final"] for r in rows], w, label="final")
    axes[0].set_title("validation latent L1")
    axes[0].legend()
    axes[1].bar(x, [r["si_snr_improvement_median"] for r in rows], color="tab:green")
    axes[1].axhline(0, color="k", lw=0.8)
    axes[1].set_title("median SI-SNR improvement (dB)")
    axes[2].bar(x, [r["mel_distance_mean"] for r in rows], color="tab:red")
    axes[2].set_title("mean mel distance")
    for ax in axes:
        ax.set_xticks(list(x))
        ax.set_xticklabels(arms)
        ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def plot_efficiency(rows, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for model, style in (("latent_se", "o-"), ("time_domain", "s--")):
        sel = [r for r in rows if r.model == model]
        axes[0].plot([r.duration_s for r in sel], [r.macs_total / 1e9 for r in sel], style, label=model)
        timed = [r for r in sel if r.rtf_median == r.rtf_median]  # drop NaN rows
        if timed:
            axes[1].plot([r.duration_s for r in timed], [r.rtf_median for r in timed], style, label=model)
    axes[0].set_yscale("log")
    axes[0].set_title("GMACs (SE part only)")
    axes[1].set_title("RTF (median)")
    for ax in axes:
        ax.set_xlabel("input duration (s)")
        ax.grid(alpha=0.3)
        ax.legend()
    return _save(fig, path)


def plot_eval(rows: Sequence[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist([r["si_snr_improvement"] for r in rows], bins=20, color="tab:blue")
    ax.axvline(0, color="k", lw=0.8)
    ax.set_xlabel("SI-SNR improvement (dB)")
    ax.set_ylabel("utterances")
    return _save(fig, path)
