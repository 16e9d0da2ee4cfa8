"""Figure assembly: Wigner contour panels and localization curve panels.

Rendering is deterministic: a fixed SVG hash salt and suppressed date
metadata make repeated renders byte-identical for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .gridio import SchemaError, grid_axes, read_grid, read_timeseries_csv, require_columns

__all__ = ["FigureSpec", "render"]

KINDS = ("wigner_contour", "localization_curves", "ensemble_convergence")
LINE_STYLES = ("solid", "dashed", "dotted", "dashdot")

matplotlib.rcParams["svg.hashsalt"] = "qbmplots"


@dataclass
class FigureSpec:
    inputs: tuple
    kind: str
    output: str
    levels: int = 8
    q_range: tuple | None = None
    p_range: tuple | None = None
    labels: tuple = ()
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; have {KINDS}")
        if not self.inputs:
            raise SchemaError("no input files")
        self.inputs = tuple(str(p) for p in self.inputs)


def _check_matching_grids(metas) -> None:
    ref = metas[0]
    for meta in metas[1:]:
        for key in ("hbar", "q_extent", "p_extent", "dims"):
            if meta.get(key) != ref.get(key):
                raise SchemaError(
                    f"grid headers disagree on {key}: {meta.get(key)} vs {ref.get(key)}"
                )


def _auto_window(q, p, values, q_range, p_range):
    if q_range is None or p_range is None:
        mask = np.abs(values) > 1e-4 * np.abs(values).max()
        rows = np.any(mask, axis=1)
        cols = np.any(mask, axis=0)
        pad_q = 0.05 * (q[-1] - q[0])
        pad_p = 0.05 * (p[-1] - p[0])
        auto_q = (q[rows].min() - pad_q, q[rows].max() + pad_q)
        auto_p = (p[cols].min() - pad_p, p[cols].max() + pad_p)
        q_range = q_range or auto_q
        p_range = p_range or auto_p
    return q_range, p_range


def _contour_panel(ax, q, p, values, n_levels):
    peak = values.max()
    pos = np.linspace(peak / n_levels, peak, n_levels)
    ax.contour(q, p, values.T, levels=pos, colors="black", linewidths=0.7, linestyles="solid")
    floor = values.min()
    if floor < -1e-12 * peak:
        neg = np.linspace(floor, floor / n_levels, max(2, n_levels // 2))
        ax.contour(q, p, values.T, levels=neg, colors="black", linewidths=0.7, linestyles="dashed")


def _render_wigner_panels(spec: FigureSpec):
    grids = [read_grid(path) for path in spec.inputs]
    _check_matching_grids([meta for _, meta in grids])
    n = len(grids)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 4.0), squeeze=False)
    q_range = spec.q_range
    p_range = spec.p_range
    if q_range is None or p_range is None:
        stacked = np.max([np.abs(v) for v, _ in grids], axis=0)
        q, p = grid_axes(grids[0][1])
        q_range, p_range = _auto_window(q, p, stacked, q_range, p_range)
    for i, (values, meta) in enumerate(grids):
        q, p = grid_axes(meta)
        ax = axes[0][i]
        _contour_panel(ax, q, p, values, spec.levels)
        ax.set_xlim(q_range)
        ax.set_ylim(p_range)
        ax.set_xlabel("q")
        if i == 0:
            ax.set_ylabel("p")
        label = spec.labels[i] if i < len(spec.labels) else meta.get("trajectory", meta.get("t", ""))
        if label != "":
            ax.set_title(str(label), fontsize=10)
    if spec.title:
        fig.suptitle(spec.title)
    return fig


def _render_localization(spec: FigureSpec):
    series = []
    for path in spec.inputs:
        cols, meta = read_timeseries_csv(path)
        require_columns(cols, ("t", "m_dq", "m_uncert"), path)
        hbar = meta.get("config", {}).get("params", {}).get("hbar")
        series.append((cols, hbar))
    fig, (ax_dq, ax_unc) = plt.subplots(1, 2, figsize=(8.4, 3.6))
    for i, (cols, hbar) in enumerate(series):
        style = LINE_STYLES[i % len(LINE_STYLES)]
        label = spec.labels[i] if i < len(spec.labels) else (f"hbar={hbar:g}" if hbar else f"run {i}")
        ax_dq.plot(cols["t"], cols["m_dq"], color="black", linestyle=style, label=label)
        ax_unc.plot(cols["t"], cols["m_uncert"], color="black", linestyle=style, label=label)
    ax_dq.set_xlabel("t")
    ax_dq.set_ylabel("mean position spread")
    ax_unc.set_xlabel("t")
    ax_unc.set_ylabel("mean uncertainty product")
    ax_unc.axhline(0.5, color="gray", linewidth=0.5)
    ax_dq.legend(fontsize=8)
    if spec.title:
        fig.suptitle(spec.title)
    return fig


def render(spec: FigureSpec) -> str:
    """Render the figure described by ``spec``; returns the output path."""
    if spec.kind in ("wigner_contour", "ensemble_convergence"):
        fig = _render_wigner_panels(spec)
    else:
        fig = _render_localization(spec)
    fig.tight_layout()
    fig.savefig(spec.output, metadata={"Date": None} if spec.output.endswith(".svg") else None)
    plt.close(fig)
    return spec.output
