"""Figure rendering for the CLI report paths.

Each report command writes delimited output; these helpers render the
matching matplotlib figure next to it. One mark per epoch on the training
curve, so progress is read against wall-clock time rather than epoch count.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .curriculum import ImageSizeSchedule, num_patches, size_for_epoch


def save_metrics_figure(metrics, path) -> None:
    """Validation top-1 vs wall-clock seconds, with the image-size staircase below."""
    fig, (ax_top, ax_size) = plt.subplots(
        2, 1, figsize=(7, 5.5), sharex=True, height_ratios=[3, 1]
    )
    t = [m.wall_clock_s for m in metrics]
    ax_top.plot(t, [m.val_top1 for m in metrics], marker="o", ms=3.5, lw=1.2, color="tab:blue")
    ax_top.set_ylabel("val top-1 (%)")
    ax_top.grid(alpha=0.3)

    ax_size.step(t, [m.image_size for m in metrics], where="post", color="tab:orange", lw=1.2)
    ax_size.set_ylabel("image size (px)")
    ax_size.set_xlabel("wall clock (s)")
    ax_size.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_bench_figure(results: dict, path) -> None:
    """Median step time against image size; token counts annotated per point."""
    sizes = sorted(results)
    times = [results[s]["step_time_ms"] for s in sizes]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, times, marker="o", color="tab:green")
    for s, t in zip(sizes, times):
        ax.annotate(f"{results[s]['tokens']} tok", (s, t), textcoords="offset points",
                    xytext=(4, 4), fontsize=8)
    ax.set_xlabel("image size (px)")
    ax.set_ylabel("median step time (ms)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_schedule_figure(schedule: ImageSizeSchedule, max_epochs: int, path) -> None:
    epochs = list(range(max_epochs))
    sizes = [size_for_epoch(schedule, e) for e in epochs]
    patches = [num_patches(schedule, e) for e in epochs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(epochs, sizes, where="post", color="tab:blue", label="image size (px)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("image size (px)", color="tab:blue")
    ax2 = ax.twinx()
    ax2.step(epochs, patches, where="post", color="tab:red", alpha=0.6, label="patch tokens")
    ax2.set_ylabel("patch tokens", color="tab:red")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
