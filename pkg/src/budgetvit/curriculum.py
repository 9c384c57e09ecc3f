"""Image-size curriculum: a linear epoch-to-size schedule.

The size grows by ``increment`` pixels every ``period_epochs`` epochs until
``final_size`` is reached. All emitted sizes stay divisible by the patch size
so patch extraction never sees a partial patch; within one epoch every image
has the same size.
"""

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ImageSizeSchedule:
    initial_size: int
    increment: int
    period_epochs: int
    final_size: int
    patch_size: int = 16


@dataclass(frozen=True)
class SizeTransition:
    epoch: int
    old_size: int
    new_size: int
    old_grid: int
    new_grid: int


#: Best configuration reported for the 224px protocol: start at 32px,
#: +32px every 5 epochs.
DEFAULT_SCHEDULE = ImageSizeSchedule(initial_size=32, increment=32, period_epochs=5, final_size=224)


def validate(s: ImageSizeSchedule) -> list[str]:
    """Check every schedule invariant; returns violations instead of raising."""
    problems = []
    if s.patch_size <= 0:
        problems.append(f"patch_size must be positive, got {s.patch_size}")
        return problems
    if s.initial_size <= 0:
        problems.append(f"initial_size must be positive, got {s.initial_size}")
    if s.initial_size % s.patch_size != 0:
        problems.append(f"initial_size {s.initial_size} not divisible by patch size {s.patch_size}")
    if s.final_size % s.patch_size != 0:
        problems.append(f"final_size {s.final_size} not divisible by patch size {s.patch_size}")
    if s.increment % s.patch_size != 0:
        problems.append(f"increment {s.increment} not divisible by patch size {s.patch_size}")
    if s.increment < 0:
        problems.append(f"increment must be non-negative, got {s.increment}")
    if s.period_epochs < 1:
        problems.append(f"period_epochs must be >= 1, got {s.period_epochs}")
    if s.initial_size > s.final_size:
        problems.append(f"initial_size {s.initial_size} exceeds final_size {s.final_size}")
    return problems


def require_valid(s: ImageSizeSchedule) -> ImageSizeSchedule:
    problems = validate(s)
    if problems:
        raise ConfigError("invalid image-size schedule: " + "; ".join(problems))
    return s


def size_for_epoch(s: ImageSizeSchedule, epoch: int) -> int:
    """min(final_size, initial_size + increment * floor(epoch / period))."""
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    return min(s.final_size, s.initial_size + s.increment * (epoch // s.period_epochs))


def transitions(s: ImageSizeSchedule, max_epochs: int) -> list[SizeTransition]:
    """All epochs in [1, max_epochs) where the size grows, in order."""
    out = []
    prev = size_for_epoch(s, 0)
    for epoch in range(1, max_epochs):
        size = size_for_epoch(s, epoch)
        if size > prev:
            out.append(SizeTransition(epoch, prev, size, prev // s.patch_size, size // s.patch_size))
        prev = size
    return out


def num_patches(s: ImageSizeSchedule, epoch: int) -> int:
    side = size_for_epoch(s, epoch) // s.patch_size
    return side * side
