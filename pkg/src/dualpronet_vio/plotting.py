"""Static figures. Every plot writes a PNG without timestamps so reruns are byte-stable."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}

_STYLE = {"groundtruth": ("k", "-"), "half": ("tab:blue", ":"), "base": ("tab:orange", "--"),
          "double": ("tab:green", "-."), "adaptive": ("tab:red", "-")}


def _save(fig, path: str) -> str:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_trajectories(pairs: dict, path: str, title: str = "") -> str:
    """Top-down overlay of aligned estimates against ground truth."""
    fig, ax = plt.subplots(figsize=(6, 5))
    gt = next(iter(pairs.values()))[1]
    ax.plot(gt.p[:, 0], gt.p[:, 1], color="k", lw=2, label="ground truth")
    for name, (est, _) in pairs.items():
        color, ls = _STYLE.get(name, (None, "-"))
        ax.plot(est.p[:, 0], est.p[:, 1], color=color, ls=ls, lw=1.2, label=name)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_sigma_trace(trace: dict, path: str, title: str = "") -> str:
    """Injected noise schedule versus the per-axis regressor outputs."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for ax, key, unit in ((axes[0], "f", "m/s$^2$"), (axes[1], "w", "rad/s")):
        ax.step(trace["t"], trace[f"true_{key}"], where="post", color="k", lw=2, label="injected")
        if "pred_t" in trace:
            pred = np.asarray(trace[f"pred_{key}"])
            for i, axis in enumerate("xyz"):
                ax.plot(trace["pred_t"], pred[:, i], lw=1, label=f"predicted {axis}")
        ax.set_ylabel(f"sigma [{unit}]")
        ax.legend(fontsize=7, ncol=4)
    axes[1].set_xlabel("t [s]")
    axes[0].set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_predictions(labels: np.ndarray, preds: np.ndarray, path: str, unit: str, title: str = "") -> str:
    """Predicted versus injected sigma, one box per grid level."""
    levels = np.unique(labels)
    fig, ax = plt.subplots(figsize=(6, 4))
    data = [preds[labels == lv] for lv in levels]
    ax.boxplot(data, positions=np.arange(len(levels)), widths=0.6, showfliers=False)
    ax.plot(np.arange(len(levels)), levels, "r.", label="injected")
    ax.set_xticks(np.arange(len(levels)))
    ax.set_xticklabels([f"{lv:g}" for lv in levels], rotation=45)
    ax.set_xlabel(f"injected sigma [{unit}]")
    ax.set_ylabel(f"predicted sigma [{unit}]")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_training(history, path: str, title: str = "") -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(history.train_loss, label="train")
    ax.semilogy(history.val_loss, label="held out")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
