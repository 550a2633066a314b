"""Paper-style figure panels from run.csv files and checkpoints."""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runio import element_mean_density, read_checkpoint, read_run_csv, require_columns

LANDAU_PANELS = ("electric_energy", "mass", "momentum", "total_energy")


@dataclass
class FigureSpec:
    csv_paths: list
    output: str
    panels: tuple = LANDAU_PANELS
    gamma: float = 0.153
    labels: list = field(default_factory=list)
    dpi: int = 150


def _envelope_anchor(t, e):
    """First local maximum of the oscillating energy (anchor for the slope)."""
    inner = (e[1:-1] > e[:-2]) & (e[1:-1] >= e[2:])
    idx = np.where(inner)[0]
    if len(idx) == 0:
        return t[0], e[0]
    i = idx[0] + 1
    return t[i], e[i]


def render(spec: FigureSpec) -> str:
    """Render the four-panel Landau figure; returns the output path."""
    runs = []
    for path in spec.csv_paths:
        table = read_run_csv(path)
        require_columns(table, ["t", "electric_energy", "mass_rel_err",
                                "momentum_abs_err", "total_energy_rel_err"])
        runs.append(table)
    labels = spec.labels or [f"run {i}" for i in range(len(runs))]

    fig, axes = plt.subplots(2, 2, figsize=(11, 7.5))
    ax_e, ax_m = axes[0]
    ax_p, ax_w = axes[1]
    for table, label in zip(runs, labels):
        t = table["t"]
        ax_e.semilogy(t, np.maximum(table["electric_energy"], 1e-300),
                      label=label)
        ax_m.semilogy(t, np.maximum(table["mass_rel_err"], 1e-300), label=label)
        ax_p.semilogy(t, np.maximum(table["momentum_abs_err"], 1e-300),
                      label=label)
        ax_w.semilogy(t, np.maximum(table["total_energy_rel_err"], 1e-300),
                      label=label)
    t0, e0 = _envelope_anchor(runs[0]["t"], runs[0]["electric_energy"])
    tt = runs[0]["t"]
    ax_e.semilogy(tt, e0 * np.exp(-2 * spec.gamma * (tt - t0)), "k--",
                  label=f"exp(-2 gamma t), gamma={spec.gamma}")
    ax_e.set_title("electric energy")
    ax_m.set_title("relative error of the mass")
    ax_p.set_title("absolute error of the momentum")
    ax_w.set_title("relative error of the total energy")
    for ax in axes.ravel():
        ax.set_xlabel("t")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=spec.dpi)
    plt.close(fig)
    return spec.output


def render_adaptivity(csv_path, output, dpi=150) -> str:
    """Element-count and rank traces of an adaptive run."""
    table = read_run_csv(csv_path)
    require_columns(table, ["t", "n_elements_x", "rank"])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(table["t"], table["n_elements_x"], "C0-", label="spatial elements")
    ax.set_xlabel("t")
    ax.set_ylabel("number of mesh elements", color="C0")
    ax2 = ax.twinx()
    ax2.plot(table["t"], table["rank"], "C3-", label="rank")
    ax2.set_ylabel("DLRA rank", color="C3")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(output, dpi=dpi)
    plt.close(fig)
    return output


def render_density(checkpoint_path, output, dpi=150, outlines=True) -> str:
    """Heatmap of the element-mean spatial density with element outlines."""
    cp = read_checkpoint(checkpoint_path)
    rho, lower, sizes = element_mean_density(cp)
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    if lower.shape[1] == 1:
        order = np.argsort(lower[:, 0])
        ax.step(lower[order, 0], rho[order], where="post")
        ax.set_xlabel("x")
        ax.set_ylabel("density")
    else:
        import matplotlib.collections as mc
        import matplotlib.patches as mp
        patches = [mp.Rectangle(lo, *sz) for lo, sz in zip(lower, sizes)]
        coll = mc.PatchCollection(patches, cmap="viridis",
                                  edgecolor="k" if outlines else "face",
                                  linewidth=0.2 if outlines else 0.0)
        coll.set_array(rho)
        ax.add_collection(coll)
        ax.autoscale_view()
        ax.set_aspect("equal")
        fig.colorbar(coll, ax=ax, label="element-mean density")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    ax.set_title(f"spatial density at t = {cp.t:g}")
    fig.tight_layout()
    fig.savefig(output, dpi=dpi)
    plt.close(fig)
    return output


# -- command-line entry points, one per figure -------------------------------


def main_landau(argv=None):
    p = argparse.ArgumentParser(description="four-panel Landau-damping figure")
    p.add_argument("csv", nargs="+", help="run.csv files to overlay")
    p.add_argument("--gamma", type=float, default=0.153,
                   help="reference decay rate for the slope line")
    p.add_argument("--label", action="append", default=[],
                   help="legend label per CSV (repeatable)")
    p.add_argument("--output", "-o", default="landau.png")
    args = p.parse_args(argv)
    out = render(FigureSpec(args.csv, args.output, gamma=args.gamma,
                            labels=args.label))
    print(out)
    return 0


def main_adaptivity(argv=None):
    p = argparse.ArgumentParser(description="element-count and rank traces")
    p.add_argument("csv")
    p.add_argument("--output", "-o", default="adaptivity.png")
    args = p.parse_args(argv)
    print(render_adaptivity(args.csv, args.output))
    return 0


def main_density(argv=None):
    p = argparse.ArgumentParser(description="density snapshot from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--output", "-o", default="density.png")
    p.add_argument("--no-outlines", action="store_true")
    args = p.parse_args(argv)
    print(render_density(args.checkpoint, args.output,
                         outlines=not args.no_outlines))
    return 0
