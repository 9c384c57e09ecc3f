"""Dataset ingestion, deterministic shuffling, per-epoch resizing, batching.

Three sources are supported:

  image-directory  root/class_name/*.{png,jpg,jpeg,bmp}
  binary-record    the common 10-class 32x32 layout: 1 label byte followed by
                   3072 pixel bytes (three channel planes) per record
  synthetic        class-conditional colored geometric patterns, generated
                   in memory and reproducible bit-exactly from a seed

The batch stream for an epoch is a pure function of
(dataset, seed, epoch, image size, batch size, augment flag).
"""

import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError
from .ops import bilinear_resize_array
from .rng import STREAM_AUGMENT, STREAM_DATA, stream

log = logging.getLogger("budgetvit.data")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
RECORD_BYTES = 1 + 3 * 32 * 32

NORMALIZATION_PRESETS = {
    "natural": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
    "half": ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)),
    "none": ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
}


@dataclass
class Dataset:
    samples: list
    num_classes: int
    split: str
    source: str
    class_names: list = field(default_factory=list)
    _records: np.ndarray | None = None  # binary-record / synthetic pixel store

    def __len__(self) -> int:
        return len(self.samples)

    def label(self, i: int) -> int:
        return self.samples[i][1]

    def image(self, i: int) -> np.ndarray:
        """Decode sample i to float32 [3, H, W] in [0, 1]."""
        ref, _ = self.samples[i]
        if self.source == "image-directory":
            from PIL import Image

            with Image.open(ref) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            return np.ascontiguousarray(arr.transpose(2, 0, 1))
        return self._records[ref].astype(np.float32) / 255.0


def load_dataset(path, format: str, split: str = "train") -> Dataset:
    """Index a dataset on disk; pixel decoding stays lazy for directories."""
    path = Path(path)
    if format == "image-directory":
        return _load_image_directory(path, split)
    if format == "binary-record":
        return _load_binary_records(path, split)
    raise ArgumentError(f"unknown dataset format {format!r}")


def _load_image_directory(root: Path, split: str) -> Dataset:
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a readable directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DataError(f"dataset root {root} contains no class directories")
    samples = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(f for f in class_dir.iterdir() if f.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise DataError(f"class directory {class_dir} contains no images")
        samples.extend((f, label) for f in files)
    return Dataset(samples, len(class_dirs), split, "image-directory",
                   class_names=[d.name for d in class_dirs])


def _load_binary_records(path: Path, split: str) -> Dataset:
    if path.is_dir():
        files = sorted(path.glob("*.bin"))
        if not files:
            raise DataError(f"{path} contains no .bin record files")
    elif path.is_file():
        files = [path]
    else:
        raise DataError(f"record path {path} does not exist")
    labels = []
    images = []
    for f in files:
        raw = np.fromfile(f, dtype=np.uint8)
        if raw.size == 0 or raw.size % RECORD_BYTES != 0:
            raise DataError(f"{f}: size {raw.size} is not a whole number of {RECORD_BYTES}-byte records")
        recs = raw.reshape(-1, RECORD_BYTES)
        labels.append(recs[:, 0].astype(np.int64))
        images.append(recs[:, 1:].reshape(-1, 3, 32, 32))
    labels = np.concatenate(labels)
    store = np.concatenate(images)
    samples = [(i, int(lab)) for i, lab in enumerate(labels)]
    return Dataset(samples, int(labels.max()) + 1, split, "binary-record", _records=store)


# -- synthetic data -----------------------------------------------------------

_PALETTE = np.array([
    (0.90, 0.15, 0.15), (0.15, 0.25, 0.90), (0.15, 0.80, 0.20), (0.95, 0.80, 0.10),
    (0.80, 0.15, 0.85), (0.10, 0.80, 0.80), (0.95, 0.50, 0.10), (0.55, 0.35, 0.15),
    (0.90, 0.45, 0.65), (0.45, 0.90, 0.45),
])
_NUM_SHAPES = 5


def _render_shape(shape_id: int, cy: float, cx: float, radius: float, size: int) -> np.ndarray:
    """Boolean mask of one of five geometric pattern families."""
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if shape_id == 0:  # disk
        return dy * dy + dx * dx <= radius * radius
    if shape_id == 1:  # square
        return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    if shape_id == 2:  # cross
        arm = radius / 2.5
        inside = (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
        return inside & ((np.abs(dy) <= arm) | (np.abs(dx) <= arm))
    if shape_id == 3:  # horizontal stripes
        period = max(2.0, radius / 1.5)
        inside = (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
        return inside & ((dy % period) < period / 2)
    # ring
    rr = np.sqrt(dy * dy + dx * dx)
    return (rr <= radius) & (rr >= radius * 0.55)


def synthetic_dataset(num_classes: int, samples_per_class: int, base_size: int,
                      seed: int, split: str = "train") -> Dataset:
    """Deterministic class-conditional images: one (shape, color) pair per class.

    Position, scale, background, and pixel noise vary per sample, so the task
    needs more than a constant template match but is learnable quickly.
    """
    if num_classes <= 0 or samples_per_class <= 0 or base_size <= 0:
        raise ArgumentError("num_classes, samples_per_class, base_size must be positive")
    store = np.empty((num_classes * samples_per_class, 3, base_size, base_size), dtype=np.uint8)
    samples = []
    idx = 0
    for label in range(num_classes):
        shape_id = label % _NUM_SHAPES
        color = _PALETTE[label % len(_PALETTE)]
        for k in range(samples_per_class):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, label, k])))
            radius = base_size * rng.uniform(0.22, 0.34)
            cy = base_size / 2 + rng.uniform(-0.16, 0.16) * base_size
            cx = base_size / 2 + rng.uniform(-0.16, 0.16) * base_size
            background = rng.uniform(0.15, 0.40)
            img = np.full((3, base_size, base_size), background, dtype=np.float64)
            mask = _render_shape(shape_id, cy, cx, radius, base_size)
            tint = np.clip(color + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)
            for ch in range(3):
                img[ch][mask] = tint[ch]
            img += rng.normal(0.0, 0.06, size=img.shape)
            store[idx] = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
            samples.append((idx, label))
            idx += 1
    return Dataset(samples, num_classes, split, "synthetic", _records=store)


def dump_binary_records(ds: Dataset, path) -> None:
    """Write a dataset out in the 1-label-byte + 3072-pixel-byte record layout."""
    path = Path(path)
    with path.open("wb") as fh:
        for i in range(len(ds)):
            img = ds.image(i)
            if img.shape != (3, 32, 32):
                raise DataError(f"binary-record layout requires 32x32 images, got {img.shape}")
            fh.write(bytes([ds.label(i)]))
            fh.write((img * 255.0).round().astype(np.uint8).tobytes())


# -- batching -----------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray  # [B, 3, S, S], normalized
    labels: np.ndarray  # [B] int64
    image_size: int


def normalization_constants(name: str, dtype) -> tuple[np.ndarray, np.ndarray]:
    if name not in NORMALIZATION_PRESETS:
        raise ArgumentError(f"unknown normalization preset {name!r}")
    mean, std = NORMALIZATION_PRESETS[name]
    shape = (3, 1, 1)
    return (np.asarray(mean, dtype=dtype).reshape(shape),
            np.asarray(std, dtype=dtype).reshape(shape))


def _resize_val(img: np.ndarray, size: int) -> np.ndarray:
    """Resize shorter side to ``size`` then center crop (identity when already square)."""
    h, w = img.shape[-2:]
    if h == w == size:
        return img
    scale = size / min(h, w)
    nh = max(size, int(round(h * scale)))
    nw = max(size, int(round(w * scale)))
    img = bilinear_resize_array(img, nh, nw, align_corners=False)
    top = (nh - size) // 2
    left = (nw - size) // 2
    return img[..., top:top + size, left:left + size]


def _augment_train(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random resized crop (area scale 0.64..1.0, square) + horizontal flip p=0.5."""
    h, w = img.shape[-2:]
    area_frac = rng.uniform(0.64, 1.0)
    side = min(min(h, w), max(1, int(round(np.sqrt(area_frac) * min(h, w)))))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    flip = rng.random() < 0.5
    crop = img[..., top:top + side, left:left + side]
    crop = bilinear_resize_array(crop, size, size, align_corners=False)
    if flip:
        crop = crop[..., ::-1]
    return crop


def epoch_batches(ds: Dataset, image_size: int, batch_size: int, epoch: int, seed: int,
                  augment: bool, dtype=np.float32, normalization: str = "half"):
    """Yield normalized batches for one epoch.

    Shuffle order comes from the data stream and augmentation draws from the
    augmentation stream, both keyed by (seed, epoch). Samples that fail to
    decode are skipped with a warning; batch boundaries refill so only the
    final batch can be short.
    """
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    mean, std = normalization_constants(normalization, dtype)
    order = stream(seed, STREAM_DATA, epoch).permutation(len(ds))
    aug_rng = stream(seed, STREAM_AUGMENT, epoch)

    images, labels = [], []
    for i in order:
        try:
            img = ds.image(int(i)).astype(dtype)
        except Exception as exc:  # never abort an epoch over one bad sample
            log.warning("skipping sample %d (%r): %s", i, ds.samples[int(i)][0], exc)
            continue
        if augment:
            img = _augment_train(img, image_size, aug_rng)
        else:
            img = _resize_val(img, image_size)
        images.append((img.astype(dtype) - mean) / std)
        labels.append(ds.label(int(i)))
        if len(images) == batch_size:
            yield Batch(np.ascontiguousarray(np.stack(images)), np.asarray(labels, dtype=np.int64), image_size)
            images, labels = [], []
    if images:
        yield Batch(np.ascontiguousarray(np.stack(images)), np.asarray(labels, dtype=np.int64), image_size)


def prefetch(iterator, depth: int = 2):
    """Run an iterator in a background thread with a bounded queue.

    Delivery order equals the sequential order; exceptions re-raise at the
    consumer. Abandoning the generator (e.g. a budget stop mid-epoch) shuts
    the producer thread down.
    """
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def worker():
        try:
            for item in iterator:
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put(done)
        except BaseException as exc:  # noqa: BLE001 - forwarded to consumer
            q.put(exc)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    try:
        while True:
            item = q.get()
            if item is done:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
