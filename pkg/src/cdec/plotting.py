"""PNG figures for the CLI outputs (headless Agg backend)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_trace(trace, path):
    """Objective and feasibility gap per iteration."""
    it = [r.iter for r in trace]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(it, [r.objective for r in trace])
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("objective")
    gap = np.array([r.feasibility_gap for r in trace])
    ax2.semilogy(it, np.maximum(gap, 1e-300))
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("feasibility gap")
    return _save(fig, path)


def plot_history(history, path):
    """Train/validation/test loss curves with the EGE on a second axis."""
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("train_loss", "val_loss", "test_loss"):
        ax.plot(epochs, [getattr(r, name) for r in history], marker=".", label=name.replace("_loss", ""))
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    twin = ax.twinx()
    twin.plot(epochs, [r.ege for r in history], color="0.4", linestyle="--", label="EGE")
    twin.set_ylabel("EGE")
    lines = ax.get_legend_handles_labels()
    extra = twin.get_legend_handles_labels()
    ax.legend(lines[0] + extra[0], lines[1] + extra[1], loc="upper right")
    return _save(fig, path)


def plot_landscape(grid, path):
    """Filled contour of the log-loss with the trained operator marked."""
    fig, ax = plt.subplots(figsize=(5, 4.5))
    B, A = np.meshgrid(grid.betas, grid.alphas)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log10(grid.losses)
    cs = ax.contourf(A, B, np.ma.masked_invalid(z), levels=30, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="log10 loss")
    ax.plot([0], [0], "r+", markersize=10)
    ax.set_xlabel("alpha")
    ax.set_ylabel("beta")
    return _save(fig, path)


def plot_compare(rows, path):
    """Grouped bars of seed-averaged test loss and EGE per cell."""
    labels = [f"L{r['L']} J{r['J']} N{r['N']}\n{r['loss']}" for r in rows]
    x = np.arange(len(rows))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(6, 1.4 * len(rows) + 2), 4))
    ax1.bar(x, [r["test_loss"] for r in rows], color="tab:blue")
    ax1.set_ylabel("test loss")
    ax2.bar(x, [r["ege"] for r in rows], color="tab:orange")
    ax2.set_ylabel("EGE")
    for ax in (ax1, ax2):
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=8)
    return _save(fig, path)
