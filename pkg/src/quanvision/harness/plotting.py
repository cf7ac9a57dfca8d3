"""Rasterized comparison plots (Agg backend, no display needed)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PANELS = (
    ("train_acc", "Training accuracy"),
    ("train_loss", "Training loss"),
    ("test_acc", "Test accuracy"),
    ("test_loss", "Test loss"),
)
STYLE = {"qnn": "-", "cnn": "--"}
# png metadata stays fixed so reruns produce identical files
METADATA = {"Software": None}


def plot_curves(report, path) -> None:
    """2 x 2 grid of seed-averaged curves, QNN solid and CNN dashed, one colour per setting."""
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    for ax, (key, title) in zip(axes.flat, PANELS):
        for i, setting in enumerate(report.settings):
            for model in ("qnn", "cnn"):
                curve = report.mean_curve(model, setting, key)
                epochs = np.arange(1, curve.size + 1)
                ax.plot(epochs, curve, STYLE[model], color=colors[i % len(colors)], label=f"{model.upper()} {setting}")
        if key == "test_acc" and report.reference_accuracy is not None:
            ax.axhline(report.reference_accuracy, color="0.4", lw=0.8, ls=":", label="reference")
        ax.set_title(title)
        ax.set_xlabel("epoch")
    axes[0, 0].legend(fontsize=8)
    fig.suptitle(f"Stage {report.stage}: QNN vs CNN")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=METADATA)
    plt.close(fig)


def plot_accuracy(report, path) -> None:
    """Final test accuracy per setting, mean over seeds with min/max whiskers."""
    settings = report.settings
    x = np.arange(len(settings))
    fig, ax = plt.subplots(figsize=(6, 4))
    for offset, model in ((-0.2, "qnn"), (0.2, "cnn")):
        accs = [[r.final_test_acc for r in report.select(model, s)] for s in settings]
        mean = np.array([np.mean(a) for a in accs])
        ax.bar(x + offset, mean, 0.4, label=model.upper())
        for xi, m, a in zip(x + offset, mean, accs):
            ax.errorbar(xi, m, yerr=[[m - min(a)], [max(a) - m]], color="k", capsize=3)
    if report.reference_accuracy is not None:
        ax.axhline(report.reference_accuracy, color="k", lw=0.8, ls=":", label="reference")
    ax.set_xticks(x, settings)
    ax.set_ylim(0, 1)
    ax.set_ylabel("final test accuracy")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=METADATA)
    plt.close(fig)
