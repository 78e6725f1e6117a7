"""Bar charts for bench results (headless, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

POLICY_COLORS = {"none": "#9e9e9e", "annotated": "#4c72b0", "all_secret": "#c44e52"}


def _grouped_bars(rows, metric: str, ylabel: str, path, reference: float | None = 1.0):
    programs = sorted({r.program for r in rows})
    policies = list(dict.fromkeys(r.policy for r in rows))
    table = {(r.program, r.policy): getattr(r, metric) for r in rows}
    width = 0.8 / max(1, len(policies))
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(programs) + 2), 3.6))
    for k, pol in enumerate(policies):
        xs = [i + (k - (len(policies) - 1) / 2) * width for i in range(len(programs))]
        ys = [table.get((p, pol), 0.0) for p in programs]
        ax.bar(xs, ys, width, label=pol, color=POLICY_COLORS.get(pol), edgecolor="black", linewidth=0.4)
    if reference is not None:
        ax.axhline(reference, color="black", linewidth=0.6, linestyle=":")
    ax.set_xticks(range(len(programs)))
    ax.set_xticklabels(programs, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.legend(frameon=False, fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_icount(rows, path):
    return _grouped_bars(rows, "icount_ratio", "instruction count / none", path)


def plot_memory(rows, path):
    return _grouped_bars(rows, "mem_ratio", "peak data bytes / none", path)
