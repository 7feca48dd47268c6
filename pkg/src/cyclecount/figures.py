"""Render the report's plot-data bundles to figure files.

Figures are data-faithful but unstyled: weekly rate curves (observed dashed,
fitted solid) and per-measure relative-frequency histograms annotated with
median and interquartile range.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")  # must precede pyplot import; file output only

import matplotlib.pyplot as plt  # noqa: E402

from .cohort import FRAIL, NON_FRAIL  # noqa: E402

DAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
GROUP_COLORS = {FRAIL: "tab:red", NON_FRAIL: "black"}


def rate_curves_figure(rates: dict[str, Any]) -> plt.Figure:
    fig, ax = plt.subplots(figsize=(10, 4))
    slots = rates["slot_index"]
    for group in (NON_FRAIL, FRAIL):
        color = GROUP_COLORS[group]
        ax.plot(
            slots,
            rates["observed"][group],
            linestyle="--",
            linewidth=0.8,
            color=color,
            label=f"{group} observed",
        )
        ax.plot(
            slots,
            rates["fitted"][group],
            linestyle="-",
            linewidth=1.4,
            color=color,
            label=f"{group} fitted",
        )
    for day in range(1, 7):
        ax.axvline(24 * day, color="0.85", linewidth=0.6, zorder=0)
    ax.set_xticks([24 * d + 12 for d in range(7)])
    ax.set_xticklabels(DAY_NAMES)
    ax.set_xlim(0, len(slots) - 1)
    ax.set_ylabel("normalized arrival rate")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return fig


def histogram_figure(measure: str, groups: dict[str, Any]) -> plt.Figure:
    fig, axes = plt.subplots(1, len(groups), figsize=(5 * len(groups), 3.2), sharey=True)
    if len(groups) == 1:
        axes = [axes]
    for ax, (group, h) in zip(axes, groups.items()):
        edges = h["bin_edges"]
        widths = [edges[i + 1] - edges[i] for i in range(len(edges) - 1)]
        ax.bar(
            edges[:-1],
            h["rel_freq"],
            width=widths,
            align="edge",
            color=GROUP_COLORS.get(group, "tab:blue"),
            alpha=0.65,
            edgecolor="white",
        )
        med = h["median"]
        q1, q3 = h["iqr"]
        ax.axvline(med, color="0.2", linewidth=1.0)
        ax.set_title(f"{measure}, {group} (m={med:g}, IQR {q1:g}-{q3:g})", fontsize=9)
        ax.set_xlabel(measure)
    axes[0].set_ylabel("relative frequency")
    fig.tight_layout()
    return fig


def render_figures(payload: dict[str, Any], out_dir: str | Path, fmt: str = "svg") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    fig = rate_curves_figure(payload["rates"])
    p = out / f"rates.{fmt}"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    for measure, groups in payload["histograms"].items():
        fig = histogram_figure(measure, groups)
        p = out / f"hist_{measure}.{fmt}"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    return paths
