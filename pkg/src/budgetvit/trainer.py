"""Wall-clock-budgeted training loop.

Wires the curriculum, data pipeline, model, and optimizer together. The
budget is checked between optimizer steps, so a run overshoots by at most one
step; after the budget expires the current epoch still gets its evaluation so
the last metrics row exists.
"""

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import curriculum as cur
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, epoch_batches, normalization_constants, prefetch
from .errors import ConfigError, NonFiniteLossError, StateError
from .model import ModelConfig, VitModel, interpolate_pos_embed
from .ops import bilinear_resize_array, cross_entropy_ls
from .optim import AdamW
from .rng import STREAM_BENCH, stream
from .tensor import no_grad

log = logging.getLogger("budgetvit.trainer")

METRICS_HEADER = ["epoch", "wall_clock_s", "image_size", "train_loss", "val_top1", "steps"]


@dataclass(frozen=True)
class TrainBudget:
    wall_clock_limit_s: float
    max_epochs: int | None = None

    def __post_init__(self):
        if not self.wall_clock_limit_s > 0:
            raise ConfigError(f"wall_clock_limit_s must be positive, got {self.wall_clock_limit_s}")


@dataclass
class TrainState:
    epoch: int = 0
    global_step: int = 0
    elapsed_s: float = 0.0
    current_image_size: int = 0


@dataclass
class MetricsRecord:
    epoch: int
    wall_clock_s: float
    image_size: int
    train_loss: float
    val_top1: float
    steps: int


@dataclass
class TrainOptions:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    label_smoothing: float = 0.1
    batch_size: int = 64
    seed: int = 0
    dtype: type = np.float32
    augment: bool = True
    normalization: str = "half"
    eval_size: int | None = None  # None: evaluate at the current curriculum size
    eval_batch_size: int = 256
    run_dir: Path | None = None
    checkpoint_every: int = 1
    use_prefetch: bool = True


@dataclass
class TrainResult:
    model: VitModel
    metrics: list[MetricsRecord]
    transitions: list[cur.SizeTransition]
    state: TrainState


def eval_view(model: VitModel, image_size: int) -> VitModel:
    """A model whose pos_embed grid matches ``image_size``, sharing all other params.

    The original model is never mutated, so training can continue at its own
    grid after an off-size evaluation.
    """
    grid = image_size // model.config.patch_size
    if grid == model.current_grid:
        return model
    view = VitModel(model.config, dict(model.params), model.current_grid, model.dtype)
    interpolate_pos_embed(view, grid)
    return view


def evaluate(model: VitModel, ds: Dataset, image_size: int, batch_size: int = 256,
             normalization: str = "half") -> float:
    """Top-1 accuracy (percent) over the whole split, no augmentation."""
    cfg = model.config
    if image_size % cfg.patch_size != 0:
        raise StateError(f"evaluate: image size {image_size} not divisible by patch size {cfg.patch_size}")
    if image_size // cfg.patch_size != model.current_grid:
        raise StateError(
            f"evaluate: pos_embed grid {model.current_grid} does not match image size {image_size}; "
            "interpolate_pos_embed first"
        )
    dtype = model.dtype
    mean, std = normalization_constants(normalization, dtype)
    correct = 0
    total = 0
    with no_grad():
        for lo in range(0, len(ds), batch_size):
            idx = range(lo, min(lo + batch_size, len(ds)))
            if ds._records is not None:
                refs = [ds.samples[i][0] for i in idx]
                raw = ds._records[refs].astype(dtype) / 255.0
                raw = _resize_val_batch(raw, image_size)
            else:
                from .data import _resize_val

                raw = np.stack([_resize_val(ds.image(i).astype(dtype), image_size) for i in idx])
            images = (raw - mean) / std
            labels = np.asarray([ds.label(i) for i in idx], dtype=np.int64)
            logits = model.forward(np.ascontiguousarray(images))
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            total += len(labels)
    return 100.0 * correct / total


def _resize_val_batch(imgs: np.ndarray, size: int) -> np.ndarray:
    h, w = imgs.shape[-2:]
    if h == w == size:
        return imgs
    scale = size / min(h, w)
    nh = max(size, int(round(h * scale)))
    nw = max(size, int(round(w * scale)))
    imgs = bilinear_resize_array(imgs, nh, nw, align_corners=False)
    top = (nh - size) // 2
    left = (nw - size) // 2
    return imgs[..., top:top + size, left:left + size]


def train_one_epoch(model: VitModel, opt: AdamW, ds: Dataset, image_size: int, epoch: int,
                    opts: TrainOptions, deadline: float | None = None) -> tuple[float, int, bool]:
    """Run one epoch of steps; returns (mean loss, steps, budget_hit).

    ``deadline`` is an absolute time.monotonic() value; it is checked between
    steps.
    """
    batches = epoch_batches(ds, image_size, opts.batch_size, epoch, opts.seed,
                            opts.augment, dtype=opts.dtype, normalization=opts.normalization)
    if opts.use_prefetch:
        batches = prefetch(batches)
    loss_sum = 0.0
    steps = 0
    budget_hit = False
    for batch in batches:
        if deadline is not None and time.monotonic() >= deadline:
            budget_hit = True
            break
        logits = model.forward(batch.images)
        loss = cross_entropy_ls(logits, batch.labels, opts.label_smoothing)
        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            raise NonFiniteLossError(f"non-finite training loss at epoch {epoch} step {steps}")
        model.zero_grads()
        loss.backward()
        opt.step(model.params)
        loss_sum += loss_value
        steps += 1
    return (loss_sum / steps if steps else 0.0), steps, budget_hit


def train(model_config: ModelConfig, train_ds: Dataset, val_ds: Dataset,
          budget: TrainBudget, schedule: cur.ImageSizeSchedule, opts: TrainOptions,
          resume_from=None) -> TrainResult:
    """Budgeted training: curriculum sizing, per-epoch eval, checkpoints, metrics."""
    cur.require_valid(schedule)
    if schedule.patch_size != model_config.patch_size:
        raise ConfigError(
            f"schedule patch size {schedule.patch_size} != model patch size {model_config.patch_size}"
        )
    if train_ds.num_classes != model_config.num_classes or val_ds.num_classes != model_config.num_classes:
        raise ConfigError(
            f"model expects {model_config.num_classes} classes; datasets have "
            f"{train_ds.num_classes}/{val_ds.num_classes}"
        )

    opt = AdamW(opts.lr, opts.beta1, opts.beta2, opts.eps, opts.weight_decay)
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        if bundle.model.config != model_config:
            raise ConfigError(
                f"checkpoint config {bundle.model.config} does not match requested {model_config}"
            )
        model = bundle.model
        opt.load_state_dict(bundle.adam_state)
        start_epoch = int(bundle.train_state["epoch"]) + 1
        global_step = int(bundle.train_state["global_step"])
    else:
        model = VitModel.create(model_config, init_seed=opts.seed, dtype=opts.dtype)
        start_epoch = 0
        global_step = 0

    run_dir = Path(opts.run_dir) if opts.run_dir is not None else None
    metrics_fh = None
    writer = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = (run_dir / "metrics.csv").open("w", newline="")
        writer = csv.writer(metrics_fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        metrics_fh.flush()

    state = TrainState(epoch=start_epoch, global_step=global_step)
    metrics: list[MetricsRecord] = []
    transitions: list[cur.SizeTransition] = []
    t0 = time.monotonic()
    deadline = t0 + budget.wall_clock_limit_s
    epoch = start_epoch
    try:
        while True:
            if budget.max_epochs is not None and epoch >= budget.max_epochs:
                break
            if time.monotonic() >= deadline:
                break
            size = cur.size_for_epoch(schedule, epoch)
            grid = size // schedule.patch_size
            if epoch >= 1:
                prev_size = cur.size_for_epoch(schedule, epoch - 1)
                if size > prev_size:
                    transitions.append(cur.SizeTransition(
                        epoch, prev_size, size, prev_size // schedule.patch_size, grid
                    ))
                    log.info("image size %d -> %d at epoch %d", prev_size, size, epoch)
            if grid != model.current_grid:
                # covers both schedule growth and the initial alignment of a
                # freshly created model (whose grid is the final size's)
                interpolate_pos_embed(model, grid)
                opt.reset("pos_embed")
            state.current_image_size = size
            state.epoch = epoch

            try:
                mean_loss, steps, budget_hit = train_one_epoch(
                    model, opt, train_ds, size, epoch, opts, deadline=deadline
                )
            except NonFiniteLossError:
                if run_dir is not None:
                    _save(run_dir, "ckpt_diagnostic.bin", model, opt, state, schedule, opts.seed)
                raise
            state.global_step += steps

            if steps > 0:
                eval_size = opts.eval_size if opts.eval_size is not None else size
                view = eval_view(model, eval_size)
                top1 = evaluate(view, val_ds, eval_size, opts.eval_batch_size, opts.normalization)
                state.elapsed_s = time.monotonic() - t0
                record = MetricsRecord(epoch, state.elapsed_s, size, mean_loss, top1, steps)
                metrics.append(record)
                if writer is not None:
                    writer.writerow([record.epoch, repr(record.wall_clock_s), record.image_size,
                                     repr(record.train_loss), repr(record.val_top1), record.steps])
                    metrics_fh.flush()
                if run_dir is not None and (epoch % opts.checkpoint_every == 0 or budget_hit):
                    _save(run_dir, f"ckpt_epoch_{epoch}.bin", model, opt, state, schedule, opts.seed)
            else:
                state.elapsed_s = time.monotonic() - t0
                if run_dir is not None:
                    _save(run_dir, f"ckpt_epoch_{epoch}.bin", model, opt, state, schedule, opts.seed)

            if budget_hit:
                break
            epoch += 1
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return TrainResult(model, metrics, transitions, state)


def _save(run_dir: Path, name: str, model, opt, state: TrainState, schedule, seed: int) -> None:
    train_state = {
        "epoch": state.epoch,
        "global_step": state.global_step,
        "elapsed_s": state.elapsed_s,
        "current_image_size": state.current_image_size,
        "seed": seed,
    }
    path = run_dir / name
    save_checkpoint(path, model, opt.state_dict(), train_state, schedule)
    (run_dir / "ckpt_latest").write_text(json.dumps({"path": name, "epoch": state.epoch}) + "\n")


def read_metrics_csv(path) -> list[MetricsRecord]:
    """Parse a metrics file back into records (round-trips exactly)."""
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise ConfigError(f"unexpected metrics header {reader.fieldnames}")
        for row in reader:
            out.append(MetricsRecord(
                int(row["epoch"]), float(row["wall_clock_s"]), int(row["image_size"]),
                float(row["train_loss"]), float(row["val_top1"]), int(row["steps"]),
            ))
    return out


def throughput_bench(model_config: ModelConfig, image_sizes: list[int], steps: int,
                     batch_size: int = 8, seed: int = 0, dtype=np.float32,
                     label_smoothing: float = 0.1) -> dict[int, dict]:
    """Median forward+backward step time per image size on an identical model.

    Two warm-up steps per size are excluded from the median.
    """
    for s in image_sizes:
        if s % model_config.patch_size != 0:
            raise ConfigError(f"bench size {s} not divisible by patch size {model_config.patch_size}")
    base = VitModel.create(model_config, init_seed=seed, dtype=dtype)
    rng = stream(seed, STREAM_BENCH)
    results: dict[int, dict] = {}
    for s in image_sizes:
        view = eval_view(base, s)
        images = rng.standard_normal((batch_size, 3, s, s)).astype(dtype)
        labels = rng.integers(0, model_config.num_classes, size=batch_size)

        def one_step():
            logits = view.forward(images)
            loss = cross_entropy_ls(logits, labels, label_smoothing)
            view.zero_grads()
            loss.backward()

        for _ in range(2):
            one_step()
        times = []
        for _ in range(steps):
            t0 = time.perf_counter()
            one_step()
            times.append((time.perf_counter() - t0) * 1000.0)
        grid = s // model_config.patch_size
        results[s] = {"step_time_ms": float(np.median(times)), "tokens": grid * grid}
    return results
