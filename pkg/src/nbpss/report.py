"""Figure rendering for posterior summaries.

Produces one PNG per effect (curve with credible band for smooth and linear
terms, point intervals for grouped terms) plus an inclusion probability
chart, written next to the delimited output.  Rendering is headless; the
Agg backend is forced so no display is needed.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import EngineError, PosteriorSummary

__all__ = ["render_figures"]

_BAND = "#9ecae1"
_LINE = "#08519c"
_BAR_IN = "#2c7fb8"
_BAR_OUT = "#bdbdbd"


def _curve_figure(effect, path: str, dpi: int) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    if effect.kind in ("spline", "linear"):
        x = np.asarray(effect.curve_x, dtype=float)
        ax.fill_between(x, effect.curve_lo, effect.curve_hi, color=_BAND, alpha=0.8,
                        linewidth=0, label="credible band")
        ax.plot(x, effect.curve_mean, color=_LINE, linewidth=1.6, label="posterior mean")
        ax.axhline(0.0, color="0.4", linewidth=0.7, linestyle=":")
        ax.set_xlabel(effect.label)
        ax.set_ylabel("partial effect")
        ax.legend(frameon=False, fontsize=8)
    else:
        idx = np.arange(len(effect.curve_labels))
        ax.errorbar(
            idx,
            effect.curve_mean,
            yerr=np.vstack([
                np.asarray(effect.curve_mean) - np.asarray(effect.curve_lo),
                np.asarray(effect.curve_hi) - np.asarray(effect.curve_mean),
            ]),
            fmt="o",
            color=_LINE,
            ecolor=_BAND,
            elinewidth=2.0,
            markersize=3,
        )
        ax.axhline(0.0, color="0.4", linewidth=0.7, linestyle=":")
        step = max(1, len(idx) // 25)
        ax.set_xticks(idx[::step])
        ax.set_xticklabels([str(l) for l in effect.curve_labels[::step]],
                           rotation=90, fontsize=6)
        ax.set_ylabel("level effect")
    title = effect.label
    if effect.selectable and effect.inclusion is not None:
        title += f"  (inclusion {effect.inclusion:.2f})"
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def _inclusion_figure(summary: PosteriorSummary, path: str, dpi: int) -> None:
    rows = [e for e in summary.effects if e.selectable]
    if not rows:
        return
    labels = [e.label for e in rows]
    probs = [e.inclusion for e in rows]
    colors = [_BAR_IN if e.selected else _BAR_OUT for e in rows]
    fig, ax = plt.subplots(figsize=(5.2, max(2.2, 0.32 * len(rows) + 1.0)))
    y = np.arange(len(rows))
    ax.barh(y, probs, color=colors)
    ax.axvline(summary.threshold, color="0.2", linewidth=0.9, linestyle="--")
    ax.set_yticks(y)
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("posterior inclusion probability")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def render_figures(
    summary: PosteriorSummary, out_dir: str, *, dpi: int = 110
) -> dict[str, str]:
    """Write effect and inclusion figures under out_dir/figures.

    Returns a name -> path map of everything written.
    """
    fig_dir = os.path.join(out_dir, "figures")
    try:
        os.makedirs(fig_dir, exist_ok=True)
        paths: dict[str, str] = {}
        inc_path = os.path.join(fig_dir, "inclusion.png")
        if any(e.selectable for e in summary.effects):
            _inclusion_figure(summary, inc_path, dpi)
            paths["inclusion"] = inc_path
        for effect in summary.effects:
            if effect.curve_mean is None:
                continue
            path = os.path.join(fig_dir, f"{effect.label}.png")
            _curve_figure(effect, path, dpi)
            paths[effect.label] = path
        return paths
    except OSError as exc:
        raise EngineError(f"cannot write figures under {fig_dir}: {exc}") from exc
