"""PNG renderings of result tables, written next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# columns never worth a panel
_SKIP = {"flagged", "nbar_tomo_err"}
_LOG = {"nbar", "nbar_tomo", "nbar_exact", "nbar_live", "nbar_m"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps the files stable between runs
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_table(table, path: Path, title: str = "", overlay=None) -> Path:
    """Every column against the first one, one panel per column."""
    x_name = table.columns[0]
    x = table.column(x_name)
    names = [c for c in table.columns[1:] if c not in _SKIP]
    fig, axes = plt.subplots(len(names), 1, figsize=(6, 2.2 * len(names) + 0.4), sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        y = table.column(name).astype(float)
        ax.plot(x, y, ".-", ms=3, lw=0.8)
        if overlay is not None and name in overlay:
            xs = np.linspace(x.min(), x.max(), 400)
            ax.plot(xs, overlay[name](xs), "-", lw=1.2, color="C3", label="fit")
            ax.legend(loc="best", fontsize=8)
        if name in _LOG and np.all(y > 0):
            ax.set_yscale("log")
        ax.set_ylabel(name, fontsize=8)
    axes[-1, 0].set_xlabel(x_name)
    if title:
        axes[0, 0].set_title(title, fontsize=9)
    return _save(fig, path)


def plot_result(result, out_dir: Path, prefix: str) -> list[Path]:
    """One PNG per table of a protocol result, with fit overlays where available."""
    out = []
    fit = getattr(result, "fit", None)
    for name, table in result.tables().items():
        overlay = None
        if name == "nbar" and fit is not None and callable(fit):
            overlay = {"nbar_tomo": fit}
        elif name == "vacuum" and fit is not None and callable(fit):
            overlay = {"p0_recon": lambda t: 1.0 - fit(t)}
        elif name == "population" and fit is not None and callable(fit):
            overlay = {"p_plus": fit}
        out.append(plot_table(table, Path(out_dir) / f"{prefix}_{name}.png", f"{prefix} {name}", overlay))
    return out


def plot_xy(x, y, path: Path, xlabel: str, ylabel: str, model=None, logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(x, y, "o", ms=3)
    if model is not None:
        xs = np.linspace(np.min(x), np.max(x), 400)
        ax.plot(xs, model(xs), "-", color="C3", lw=1.2)
    if logy and np.all(np.asarray(y) > 0):
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _save(fig, path)
