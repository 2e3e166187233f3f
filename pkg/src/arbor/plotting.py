"""Figures for CLI reports, rendered off-screen to PNG files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}
# no software/version stamp, so identical inputs give identical bytes
PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=PNG_META)
    plt.close(fig)
    return path


def tree_layout(tree, root=None):
    """x positions from leaf order, y from depth below the root."""
    view = tree.rooted(root)
    pos = {}
    depth = {view.root: 0}
    for v in view.order[1:]:
        depth[v] = depth[view.parent[v]] + 1
    counter = [0]

    def place(v):
        kids = sorted(view.children[v])
        if not kids:
            pos[v] = (float(counter[0]), -depth[v])
            counter[0] += 1
            return
        for c in kids:
            place(c)
        pos[v] = (float(np.mean([pos[c][0] for c in kids])), -depth[v])

    place(view.root)
    return pos, view


def plot_tree(tree, path, edge_values=None, title=None):
    """Draw a latent tree; leaves are labeled circles, hidden vertices grey dots."""
    pos, view = tree_layout(tree)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4, 0.7 * tree.m + 2), 3.5))
        for a, b in view.directed_edges():
            (x0, y0), (x1, y1) = pos[a], pos[b]
            ax.plot([x0, x1], [y0, y1], color="0.3", lw=1.2, zorder=1)
            if edge_values is not None:
                val = edge_values.get((a, b), edge_values.get((b, a)))
                if val is not None:
                    ax.text((x0 + x1) / 2, (y0 + y1) / 2, f"{val:.2f}", fontsize=7, color="C3", ha="center")
        for v, (x, y) in sorted(pos.items()):
            if tree.is_leaf(v):
                ax.scatter([x], [y], s=220, color="white", edgecolors="k", zorder=2)
                ax.text(x, y, str(v), ha="center", va="center", zorder=3)
            else:
                ax.scatter([x], [y], s=30, color="0.5", zorder=2)
        ax.set_axis_off()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_trace(trace, path, title="log-likelihood"):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(np.arange(len(trace)), trace, marker="o", ms=3, lw=1)
        ax.set_xlabel("iteration")
        ax.set_ylabel("log-likelihood")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_residuals(report, path):
    """Tetrad residuals with bootstrap bands, and split rank distances."""
    panels = [x for x in (report.quartets, report.splits) if x]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, max(1, len(panels)), figsize=(4.5 * max(1, len(panels)), 3), squeeze=False)
        k = 0
        if report.quartets:
            ax = axes[0, k]
            k += 1
            r = np.array([q.residual for q in report.quartets])
            x = np.arange(len(r))
            ax.axhline(0, color="0.6", lw=0.8)
            if all(q.band is not None for q in report.quartets):
                lo = np.array([q.band[0] for q in report.quartets])
                hi = np.array([q.band[1] for q in report.quartets])
                ax.vlines(x, lo, hi, color="C0", alpha=0.5)
            ax.plot(x, r, "o", color="C0", ms=4)
            ax.set_xticks(x)
            ax.set_xticklabels(["".join(map(str, q.quartet)) for q in report.quartets], rotation=90, fontsize=6)
            ax.set_ylabel("tetrad residual")
        if report.splits:
            ax = axes[0, k]
            d = [s.rank_distance for s in report.splits]
            ax.bar(np.arange(len(d)), d, color="C1")
            ax.set_xticks(np.arange(len(d)))
            ax.set_xticklabels(["".join(map(str, s.split[0])) for s in report.splits], rotation=90, fontsize=6)
            ax.set_ylabel("rank distance")
        fig.tight_layout()
        return _save(fig, path)
