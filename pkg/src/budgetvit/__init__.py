"""Budget-constrained vision-Transformer training.

A numpy-based library and CLI: a minimal reverse-mode autodiff engine, a ViT
classifier whose FFNs carry a 3x3 depthwise convolution for locality, an
image-size curriculum that grows input resolution on a linear schedule, and a
wall-clock-budgeted trainer.
"""

import os

# Sequential BLAS keeps results identical to single-threaded evaluation and is
# faster than the thread pool at the matrix sizes this package works with.
# Has effect only if numpy has not been imported yet; explicit env wins.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from .curriculum import DEFAULT_SCHEDULE, ImageSizeSchedule, SizeTransition, size_for_epoch, transitions
from .data import Batch, Dataset, epoch_batches, load_dataset, synthetic_dataset
from .errors import (
    ArgumentError,
    BudgetVitError,
    CheckpointError,
    ConfigError,
    DataError,
    NonFiniteLossError,
    ShapeError,
    StateError,
)
from .model import (
    ModelConfig,
    VitModel,
    encoder_block,
    im2seq,
    interpolate_pos_embed,
    locality_ffn,
    msa,
    patchify,
    plain_ffn,
    seq2im,
)
from .optim import AdamW, adamw_step
from .tensor import Tensor, no_grad
from .trainer import (
    MetricsRecord,
    TrainBudget,
    TrainOptions,
    TrainResult,
    TrainState,
    evaluate,
    throughput_bench,
    train,
)

__version__ = "0.1.0"
