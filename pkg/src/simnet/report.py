"""Figure rendering for experiment results.

Renders the optimization trace, the final channel magnitude and the
metric sweep as PNG files next to the CSV/JSON artifacts.  Uses the Agg
backend so it works headless.
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(result, name, fig, filename):
    path = os.path.join(result.out_dir, filename)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    result.files[name] = path
    return path


def render_trace(result):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    plotted = False
    if result.continuous is not None:
        trace = np.asarray([(row[0], row[1]) for row in
                            result.continuous.trace])
        ax.semilogy(trace[:, 0], trace[:, 1], label="continuous phases")
        plotted = True
    if result.discrete is not None:
        losses = [row[2] for row in result.discrete.trace]
        ax.semilogy(range(len(losses)), losses, marker=".",
                    label="codebook moves")
        plotted = True
    if not plotted:
        plt.close(fig)
        return None
    ax.set_xlabel("iteration / accepted move")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(result, "fig_trace", fig, "trace.png")


def render_channel(result):
    runs = [(label, run) for label, run in
            (("continuous", result.continuous),
             ("discrete", result.discrete)) if run is not None]
    if not runs:
        return None
    fig, axes = plt.subplots(1, len(runs),
                             figsize=(4.5 * len(runs), 4.0), squeeze=False)
    for ax, (label, run) in zip(axes[0], runs):
        magnitude = np.abs(run.beta * run.y)
        im = ax.imshow(magnitude, cmap="viridis")
        ax.set_title(f"|beta Y| ({label})")
        ax.set_xlabel("input stream")
        ax.set_ylabel("output port")
        fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(result, "fig_channel", fig, "channel.png")


def render_metrics(result):
    rows = result.metric_rows
    if not rows:
        return None
    snr = [row["snr_db"] for row in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if "sigma" in rows[0]:
        ax.semilogy(snr, [row["sigma"] for row in rows], marker="o")
        ax.set_ylabel("estimation error std")
    else:
        for key in rows[0]:
            if key == "snr_db":
                continue
            ax.plot(snr, [row[key] for row in rows], marker="o",
                    label=key.replace("_", " "))
        ax.set_ylabel("capacity (bits)")
        ax.legend()
    ax.set_xlabel("SNR (dB)")
    ax.grid(True, which="both", alpha=0.3)
    return _save(result, "fig_metrics", fig, "metrics.png")


def render_figures(result):
    """Render every applicable figure; returns the written paths."""
    paths = [render_trace(result), render_channel(result),
             render_metrics(result)]
    return [p for p in paths if p]
