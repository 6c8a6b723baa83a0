"""Deterministic figure renderers, one per documented CSV kind.

Determinism contract: same CSV in, byte-identical image out. Everything
that feeds the canvas is sorted before plotting, and the saved PNG gets a
fixed metadata block so no timestamp or library version lands in the file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import SchemaError, Table, load_table

KINDS = ("eps_bars", "eta_lines", "k_lines", "homophily_hist", "theory_curve")

_PNG_METADATA = {"Software": "figures"}
_DPI = 150
MASS_TOL = 1e-9

# default axis labels per kind; FigureSpec fields override them
_LABELS = {
    "eps_bars": ("privacy budget epsilon", "accuracy"),
    "eta_lines": ("attack ratio", "impact ratio"),
    "k_lines": ("aggregation rounds K", "accuracy"),
    "homophily_hist": ("homophily score", "probability mass"),
    "theory_curve": ("privacy budget epsilon", "mean energy shift"),
}


@dataclass(frozen=True)
class FigureSpec:
    """One figure: which CSV, which layout, where the image goes."""

    input_csv: str
    kind: str
    output_path: str
    title: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {', '.join(KINDS)}")


def _pick(values, preferred):
    """Deterministic slice choice: preferred value if present, else sorted first."""
    present = sorted(set(values))
    return preferred if preferred in present else present[0]


def _yerr(mean, lo, hi):
    # asymmetric (lower, upper) distances; clip floating dust at zero.
    # nested lists, not ndarray: array rows trip a scalar-conversion
    # deprecation inside bar() when a group holds a single bar
    m, l, h = np.asarray(mean), np.asarray(lo), np.asarray(hi)
    return np.maximum(np.vstack([m - l, h - m]), 0.0).tolist()


def _eps_bars(table: Table):
    """Grouped accuracy bars, epsilon groups x mechanism bars.

    The CSV may carry several scopes and phases; one deterministic slice is
    drawn (targeted before others, attacked before clean). Rows with a
    non-finite epsilon are the non-private reference and become a dashed
    horizontal line instead of a bar.
    """
    table.require("mechanism", "epsilon", "scope", "phase", "mean")
    mech = table.strings("mechanism")
    eps = table.floats("epsilon")
    scope = table.strings("scope")
    phase = table.strings("phase")
    mean = table.floats("mean")
    has_ci = table.has("ci_low", "ci_high")
    lo = table.floats("ci_low") if has_ci else None
    hi = table.floats("ci_high") if has_ci else None

    finite = [i for i in range(len(table)) if math.isfinite(eps[i])]
    if not finite:
        raise SchemaError(f"{table.path}: no rows with finite epsilon")
    want_scope = _pick([scope[i] for i in finite], "targeted")
    finite = [i for i in finite if scope[i] == want_scope]
    want_phase = _pick([phase[i] for i in finite], "attacked")
    finite = [i for i in finite if phase[i] == want_phase]

    eps_values = sorted(set(eps[i] for i in finite))
    mechanisms = sorted(set(mech[i] for i in finite))
    cell = {(mech[i], eps[i]): i for i in finite}

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    x = np.arange(len(eps_values), dtype=np.float64)
    width = 0.8 / len(mechanisms)
    handles = []
    for j, name in enumerate(mechanisms):
        idx = [cell.get((name, e)) for e in eps_values]
        heights = [mean[i] if i is not None else math.nan for i in idx]
        yerr = None
        if has_ci:
            pairs = [(mean[i], lo[i], hi[i]) if i is not None else (0.0, 0.0, 0.0)
                     for i in idx]
            yerr = _yerr(*zip(*pairs))
        offset = (j - (len(mechanisms) - 1) / 2.0) * width
        handles.append(ax.bar(x + offset, heights, width=width, yerr=yerr,
                              capsize=2, label=name))

    reference = [i for i in range(len(table))
                 if not math.isfinite(eps[i]) and scope[i] == want_scope]
    if reference:
        ref_phase = _pick([phase[i] for i in reference], want_phase)
        values = [mean[i] for i in reference if phase[i] == ref_phase]
        handles.append(ax.axhline(float(np.mean(values)), color="black",
                                  linestyle="--", linewidth=1.0,
                                  label="non-private"))

    ax.set_xticks(x)
    ax.set_xticklabels([f"{e:g}" for e in eps_values])
    ax.set_title(f"{want_scope} / {want_phase}")
    ax.legend(handles=handles)
    return fig, [ax]


def _eta_lines(table: Table):
    """Impact ratio against eta, one panel per swept parameter."""
    table.require("which", "eta", "scope", "clean_mean", "attacked_mean",
                  "impact_ratio")
    which = table.strings("which")
    eta = table.floats("eta")
    scope = table.strings("scope")
    ratio = table.floats("impact_ratio")

    panels = sorted(set(which))
    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 3.6),
                             squeeze=False, sharey=True)
    axes = list(axes[0])
    for ax, name in zip(axes, panels):
        for sc in sorted(set(scope)):
            pts = sorted((eta[i], ratio[i]) for i in range(len(table))
                         if which[i] == name and scope[i] == sc)
            if pts:
                ax.plot(*zip(*pts), marker="o", label=sc)
        ax.set_title(name)
        ax.legend()
    return fig, axes


def _k_lines(table: Table):
    """Accuracy against aggregation depth, one line per phase/scope pair."""
    table.require("k", "phase", "scope", "mean")
    k = table.floats("k")
    phase = table.strings("phase")
    scope = table.strings("scope")
    mean = table.floats("mean")
    has_ci = table.has("ci_low", "ci_high")
    lo = table.floats("ci_low") if has_ci else None
    hi = table.floats("ci_high") if has_ci else None

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for ph, sc in sorted(set(zip(phase, scope))):
        idx = sorted(i for i in range(len(table))
                     if phase[i] == ph and scope[i] == sc)
        idx.sort(key=lambda i: k[i])
        yerr = _yerr([mean[i] for i in idx], [lo[i] for i in idx],
                     [hi[i] for i in idx]) if has_ci else None
        ax.errorbar([k[i] for i in idx], [mean[i] for i in idx], yerr=yerr,
                    marker="o", capsize=2, label=f"{ph}/{sc}")
    ax.legend()
    return fig, [ax]


def _homophily_hist(table: Table):
    """Overlaid normalized histograms, one layer per phase (pre, post)."""
    table.require("bin_low", "bin_high", "mass", "phase")
    lo = np.asarray(table.floats("bin_low"))
    hi = np.asarray(table.floats("bin_high"))
    mass = np.asarray(table.floats("mass"))
    phase = table.strings("phase")

    head = {"pre": 0, "post": 1}
    phases = sorted(set(phase), key=lambda p: (head.get(p, len(head)), p))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in phases:
        sel = [i for i in range(len(table)) if phase[i] == name]
        sel.sort(key=lambda i: lo[i])
        total = float(mass[sel].sum())
        if abs(total - 1.0) > MASS_TOL:
            raise SchemaError(f"{table.path}: phase {name!r} masses sum to "
                              f"{total!r}, expected 1 within {MASS_TOL:g}")
        ax.bar(lo[sel], mass[sel], width=hi[sel] - lo[sel], align="edge",
               alpha=0.55, label=name)
    ax.legend()
    return fig, [ax]


def _theory_curve(table: Table):
    """Mean energy shift against epsilon; stderr column widens to a 95% bar."""
    table.require("epsilon", "mean_delta_psi")
    eps = table.floats("epsilon")
    mean = table.floats("mean_delta_psi")
    order = sorted(range(len(table)), key=lambda i: eps[i])
    xs = [eps[i] for i in order]
    ys = [mean[i] for i in order]
    yerr = None
    if table.has("stderr"):
        se = table.floats("stderr")
        yerr = [1.96 * se[i] for i in order]

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(xs, ys, yerr=yerr, marker="o", capsize=2)
    if all(v > 0 for v in xs):
        ax.set_xscale("log")
    if all(v > 0 for v in ys):
        ax.set_yscale("log")
    return fig, [ax]


_RENDERERS = {
    "eps_bars": _eps_bars,
    "eta_lines": _eta_lines,
    "k_lines": _k_lines,
    "homophily_hist": _homophily_hist,
    "theory_curve": _theory_curve,
}


def build_figure(spec: FigureSpec):
    """The matplotlib Figure for a spec; render() saves and closes it."""
    table = load_table(spec.input_csv)
    fig, axes = _RENDERERS[spec.kind](table)
    xlabel, ylabel = _LABELS[spec.kind]
    for ax in axes:
        ax.set_xlabel(spec.xlabel or xlabel)
    axes[0].set_ylabel(spec.ylabel or ylabel)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> str:
    """Render one figure to spec.output_path and return that path."""
    fig = build_figure(spec)
    try:
        kwargs = {}
        if spec.output_path.lower().endswith(".png"):
            kwargs["metadata"] = dict(_PNG_METADATA)
        fig.savefig(spec.output_path, dpi=_DPI, **kwargs)
    finally:
        plt.close(fig)
    return spec.output_path
