"""Figures for experiment summaries. CSV remains the primary output."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 6.0
fig_size = [fig_width, fig_width * golden_mean]

params = {
    "axes.labelsize": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": fig_size,
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}

# fixed look per method so figures from different runs line up
_STYLE = {
    "TB1-fixed": ("#1f77b4", "--", "o"),
    "TB1-adaptive": ("#1f77b4", "-", "o"),
    "TB2-fixed": ("#d62728", "--", "s"),
    "TB2-adaptive": ("#d62728", "-", "s"),
    "BR-fixed": ("#7f7f7f", "-", "^"),
    "PS1-fixed": ("#2ca02c", "-", "v"),
    "PS2-fixed": ("#9467bd", "-", "D"),
}


def _series(summary, dataset, column):
    out = {}
    for s in summary:
        if s["dataset"] != dataset:
            continue
        out.setdefault(f"{s['method']}-{s['procedure']}", []).append((s["alpha"], s[column]))
    return {k: sorted(v) for k, v in sorted(out.items())}


def _draw(ax, series):
    for name, pts in series.items():
        color, ls, marker = _STYLE.get(name, ("k", "-", "."))
        a, v = zip(*pts)
        label = name.replace("-fixed", "") if name[:2] in ("BR", "PS") else name
        ax.plot(a, v, color=color, linestyle=ls, marker=marker, label=label)


def plot_coverage(summary, dataset, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        _draw(ax, _series(summary, dataset, "coverage_mean"))
        grid = np.linspace(min(s["alpha"] for s in summary), max(s["alpha"] for s in summary), 50)
        ax.plot(grid, 1 - grid, color="k", linewidth=0.8, label=r"$1-\alpha$")
        ax.set_xlabel(r"$\alpha$")
        ax.set_ylabel("coverage")
        ax.set_title(dataset)
        ax.legend(ncol=2)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_length(summary, dataset, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        _draw(ax, _series(summary, dataset, "mean_len_mean"))
        ax.set_xlabel(r"$\alpha$")
        ax.set_ylabel("mean set size")
        ax.set_title(dataset)
        ax.legend(ncol=2)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_lambda(table, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for ds in sorted({t["dataset"] for t in table}):
            rows = sorted((t["alpha"], t["c_lambda_mean"]) for t in table if t["dataset"] == ds)
            a, v = zip(*rows)
            ax.plot(a, v, marker="o", label=ds)
        ax.axhline(1.0, color="k", linewidth=0.8)
        ax.set_xlabel(r"$\alpha$")
        ax.set_ylabel(r"$c\,\lambda^*$")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def render_all(summary, lambda_table, outdir) -> list[str]:
    """Write coverage and length figures per dataset plus the lambda figure."""
    import os

    paths = []
    for ds in sorted({s["dataset"] for s in summary}):
        slug = ds.replace("/", "_")
        for kind, fn in (("coverage", plot_coverage), ("length", plot_length)):
            p = os.path.join(outdir, f"{kind}_{slug}.png")
            fn(summary, ds, p)
            paths.append(p)
    if lambda_table:
        p = os.path.join(outdir, "lambda.png")
        plot_lambda(lambda_table, p)
        paths.append(p)
    return paths
