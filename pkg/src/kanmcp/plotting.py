"""Matplotlib figures written next to the text reports (PNG, Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import EmptyHistory, IoError  # noqa: E402
from .viz import MODALITY_BLOCKS, SERIES, opacity  # noqa: E402

RC = {
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path):
    try:
        fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None
    finally:
        plt.close(fig)


def loss_curves_png(history, path):
    if not history or any(len(history.get(k, [])) == 0 for k, _, _ in SERIES):
        raise EmptyHistory("history needs non-empty 'multi', 't', 'a' and 'v' series")
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        for key, label, color in SERIES:
            ys = history[key]
            ax.plot(np.arange(1, len(ys) + 1), ys, label=label, color=color, lw=1.6)
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss")
        ax.legend(frameon=False)
        _save(fig, path)


def kan_diagram_png(net, attributions, path, o_min=0.05):
    """Same encoding as the SVG diagram: edge alpha follows normalised attribution."""
    widths = net.widths
    max_a = max(float(np.max(a)) for a in attributions)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = np.linspace(0, 1, len(widths))
        ys = [np.linspace(1, 0, n) if n > 1 else np.array([0.5]) for n in widths]
        for li, a in enumerate(attributions):
            alpha = opacity(a, max_a, o_min)
            for q in range(a.shape[0]):
                for p in range(a.shape[1]):
                    ax.plot([xs[li], xs[li + 1]], [ys[li][p], ys[li + 1][q]], color="k", alpha=float(alpha[q, p]), lw=1.5)
        n0 = widths[0]
        size = n0 // len(MODALITY_BLOCKS) if n0 % len(MODALITY_BLOCKS) == 0 else None
        for li, n in enumerate(widths):
            colors = ["#444444"] * n
            if li == 0 and size:
                colors = [MODALITY_BLOCKS[i // size][2] for i in range(n)]
            ax.scatter(np.full(n, xs[li]), ys[li], c=colors, s=60, zorder=3)
        if size:
            for bi, (_, label, color) in enumerate(MODALITY_BLOCKS):
                ax.text(xs[0] - 0.04, ys[0][bi * size : (bi + 1) * size].mean(), label, color=color, ha="right", va="center")
        ax.set_axis_off()
        _save(fig, path)
