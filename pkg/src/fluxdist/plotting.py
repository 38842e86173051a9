"""Static figures for the command-line reports.

Figures are drawn on a bare Agg canvas (no pyplot state) and saved with
fixed metadata and a fixed SVG hash salt so that the same data always gives
the same bytes.
"""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

__all__ = ["lognlogs_figure", "trace_figure", "rungs_figure", "criteria_figure", "save"]

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "fluxdist",
    "svg.fonttype": "path",
}

_METADATA = {
    ".svg": {"Date": None, "Creator": None},
    ".png": {"Software": None},
    ".pdf": {"CreationDate": None, "ModDate": None, "Producer": None, "Creator": None},
}


def _new_figure(width=4.5, height=3.4):
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(width, height))
        FigureCanvasAgg(fig)
        ax = fig.add_subplot(1, 1, 1)
    return fig, ax


def save(fig: Figure, path) -> Path:
    """Write ``fig`` to ``path``; the format follows the suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in _METADATA:
        raise ValueError(f"unsupported figure format {suffix!r}; use .svg, .png or .pdf")
    with matplotlib.rc_context(_STYLE):
        fig.savefig(path, metadata=_METADATA[suffix], dpi=150)
    return path


def lognlogs_figure(curve, overlay=None, taus=()):
    """Empirical log N - log S steps, optional fitted segments and breakpoints."""
    fig, ax = _new_figure()
    ax.step(curve[:, 0], curve[:, 1], where="post", color="0.2", lw=0.9, label="sources")
    for k, seg in enumerate(overlay or []):
        ax.plot([seg["log10_s_start"], seg["log10_s_end"]],
                [seg["log10_n_start"], seg["log10_n_end"]],
                color="C3", lw=1.4, label="fit" if k == 0 else None)
    for tau in taus:
        ax.axvline(math.log10(tau), color="C0", ls=":", lw=0.8)
    ax.xaxis.set_major_locator(MaxNLocator(5))
    ax.set_xlabel(r"$\log_{10} S$")
    ax.set_ylabel(r"$\log_{10} N(>S)$")
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def trace_figure(trajectory, baseline=None):
    """Per-iteration parameter values; with ``baseline`` a second panel of
    negative log-likelihood values and the optimum as a dashed line."""
    B = trajectory[0].B
    it = list(range(len(trajectory)))
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(4.5, 3.4 if baseline is None else 5.6))
        FigureCanvasAgg(fig)
        axes = fig.subplots(1 if baseline is None else 2, 1, squeeze=False)[:, 0]
    for j in range(B):
        axes[0].plot(it, [t.beta[j] for t in trajectory], marker=".", lw=0.9, label=rf"$\beta_{j + 1}$")
    axes[0].set_ylabel("slope")
    axes[0].legend(frameon=False)
    if baseline is not None:
        values, optimum = baseline
        axes[1].plot(it, values, marker=".", lw=0.9, color="C2")
        axes[1].axhline(optimum, ls="--", color="0.4", lw=0.8)
        axes[1].set_ylabel("negative log-likelihood")
    axes[-1].xaxis.set_major_locator(MaxNLocator(integer=True))
    axes[-1].set_xlabel("iteration")
    fig.tight_layout()
    return fig


def rungs_figure(ts, means, ses):
    fig, ax = _new_figure()
    ax.errorbar(ts, means, yerr=ses, marker="o", ms=3, lw=0.9, capsize=2)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$E_t[\log p(Y\mid S)]$")
    fig.tight_layout()
    return fig


def criteria_figure(bs, aic, bic):
    fig, ax = _new_figure()
    ax.plot(bs, aic, marker="o", lw=0.9, label="AIC")
    ax.plot(bs, bic, marker="s", lw=0.9, label="BIC")
    ax.set_xticks(list(bs))
    ax.set_xlabel("number of pieces B")
    ax.set_ylabel("criterion")
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig
