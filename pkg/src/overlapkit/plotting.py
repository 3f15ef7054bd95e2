"""Figure rendering for the CLI report paths.

Each function takes rows as dictionaries (same content as the written
CSV/JSON) and saves a PNG next to the delimited output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_density(rows, path) -> None:
    """Density and Hilbert-transform curves per spectrum."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted({r["spectrum"] for r in rows}):
        pts = [(r["lambda"], r["rho"]) for r in rows if r["spectrum"] == name]
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker=".", label=name)
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("density")
    ax.legend()
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def plot_theory(rows, path) -> None:
    """Theoretical overlap curves against the full-spectrum position."""
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = sorted({r["x"] for r in rows if r.get("x") is not None})
    for x in groups:
        sub = [r for r in rows if r.get("x") == x]
        for key, color in (("vbar", "tab:red"), ("ubar", "tab:blue"),
                           ("wbar", "tab:green")):
            pts = [(r["lambda"], r[key]) for r in sub if r.get(key) is not None]
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, color=color,
                    label=f"{key}, x={x:g}" if len(groups) > 1 else key)
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("rescaled overlap")
    ax.legend(fontsize=8)
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def plot_compare(rows, path) -> None:
    """Theory curves with Monte Carlo estimates and error bars, per x."""
    groups = sorted({r["x"] for r in rows})
    fig, axes = plt.subplots(1, len(groups), figsize=(4.2 * len(groups), 3.6),
                             squeeze=False)
    channels = (("v", "tab:red", "o"), ("u", "tab:blue", "^"),
                ("w", "tab:green", "s"))
    for ax, x in zip(axes[0], groups):
        sub = sorted((r for r in rows if r["x"] == x), key=lambda r: r["lambda"])
        lam = [r["lambda"] for r in sub]
        for name, color, marker in channels:
            ax.plot(lam, [r[f"{name}_theory"] for r in sub], color=color,
                    label=f"{name} theory")
            ax.errorbar(lam, [r[f"{name}_mc"] for r in sub],
                        yerr=[r[f"{name}_se"] for r in sub], color=color,
                        marker=marker, linestyle="none", markersize=4,
                        capsize=2, label=f"{name} MC")
        ax.set_title(f"x = {x:g}")
        ax.set_xlabel("eigenvalue")
    axes[0][0].set_ylabel("rescaled overlap")
    axes[0][-1].legend(fontsize=7)
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def plot_burgers(rows, path) -> None:
    """Per-point deviations of the empirical transforms from the solver."""
    fig, ax = plt.subplots(figsize=(6, 4))
    re = [r["re_z"] for r in rows]
    ax.plot(re, [r["dev_sde"] for r in rows], "o-", label="diffusion endpoint")
    ax.plot(re, [r["dev_direct"] for r in rows], "s-", label="direct sample")
    ax.set_xlabel("Re z")
    ax.set_ylabel("|empirical - solver|")
    ax.set_yscale("log")
    ax.legend()
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)
