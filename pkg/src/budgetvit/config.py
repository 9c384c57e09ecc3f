"""Run configuration: INI-style sectioned key=value files.

Every key is schema-checked; unknown sections or keys are errors, not
warnings. ``--override section.key=value`` flags are applied before
validation. The resolved configuration can be frozen back to disk and
reparsed to reproduce the run.
"""

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import curriculum as cur
from .data import Dataset, load_dataset, synthetic_dataset
from .errors import ConfigError
from .model import ModelConfig
from .rng import STREAM_SYNTHETIC, derived_seed
from .trainer import TrainBudget, TrainOptions

# (type, default); type one of int float bool str opt_int
_SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "embed_dim": ("int", 384),
        "depth": ("int", 12),
        "num_heads": ("int", 6),
        "patch_size": ("int", 16),
        "num_classes": ("int", 1000),
        "ffn_kind": ("str", "locality"),
        "activation": ("str", "h_swish"),
        "use_class_token": ("bool", True),
        "gelu_approximate": ("bool", False),
    },
    "schedule": {
        "initial_size": ("int", 32),
        "increment": ("int", 32),
        "period_epochs": ("int", 5),
        "final_size": ("int", 224),
    },
    "optim": {
        "lr": ("float", 1e-3),
        "beta1": ("float", 0.9),
        "beta2": ("float", 0.999),
        "eps": ("float", 1e-8),
        "weight_decay": ("float", 0.05),
        "label_smoothing": ("float", 0.1),
        "batch_size": ("int", 64),
    },
    "data": {
        "format": ("str", "synthetic"),
        "train_path": ("str", ""),
        "val_path": ("str", ""),
        "normalization": ("str", "half"),
        "augment": ("bool", True),
        "synthetic_classes": ("int", 10),
        "synthetic_train_per_class": ("int", 100),
        "synthetic_val_per_class": ("int", 50),
        "synthetic_base_size": ("int", 64),
    },
    "budget": {
        "wall_clock_limit_s": ("float", 86400.0),
        "max_epochs": ("opt_int", None),
    },
    "run": {
        "seed": ("int", 0),
        "run_dir": ("str", "runs/default"),
        "precision": ("str", "single"),
        "eval_size": ("opt_int", None),
        "eval_batch_size": ("int", 256),
    },
}

_PRECISIONS = {"single": np.float32, "double": np.float64}


@dataclass
class RunConfig:
    model: ModelConfig
    schedule: cur.ImageSizeSchedule
    budget: TrainBudget
    raw: dict  # resolved {section: {key: typed value}}

    @property
    def seed(self) -> int:
        return self.raw["run"]["seed"]

    @property
    def run_dir(self) -> Path:
        return Path(self.raw["run"]["run_dir"])

    @property
    def dtype(self):
        return _PRECISIONS[self.raw["run"]["precision"]]

    def train_options(self) -> TrainOptions:
        o = self.raw["optim"]
        r = self.raw["run"]
        d = self.raw["data"]
        return TrainOptions(
            lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
            weight_decay=o["weight_decay"], label_smoothing=o["label_smoothing"],
            batch_size=o["batch_size"], seed=r["seed"], dtype=self.dtype,
            augment=d["augment"], normalization=d["normalization"],
            eval_size=r["eval_size"], eval_batch_size=r["eval_batch_size"],
            run_dir=self.run_dir,
        )

    def load_datasets(self) -> tuple[Dataset, Dataset]:
        d = self.raw["data"]
        if d["format"] == "synthetic":
            train = synthetic_dataset(
                d["synthetic_classes"], d["synthetic_train_per_class"], d["synthetic_base_size"],
                derived_seed(self.seed, STREAM_SYNTHETIC, 0), split="train",
            )
            val = synthetic_dataset(
                d["synthetic_classes"], d["synthetic_val_per_class"], d["synthetic_base_size"],
                derived_seed(self.seed, STREAM_SYNTHETIC, 1), split="val",
            )
            return train, val
        train = load_dataset(d["train_path"], d["format"], "train")
        val = load_dataset(d["val_path"], d["format"], "val")
        return train, val


def _parse_value(kind: str, text: str, where: str):
    text = text.strip()
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{where}: expected integer, got {text!r}") from None
    if kind == "float":
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{where}: expected number, got {text!r}") from None
    if kind == "bool":
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected boolean, got {text!r}")
    if kind == "opt_int":
        if text == "" or text.lower() == "none":
            return None
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{where}: expected integer or empty, got {text!r}") from None
    return text


def _defaults() -> dict:
    return {section: {key: spec[1] for key, spec in keys.items()} for section, keys in _SCHEMA.items()}


def parse_config(path, overrides: tuple[str, ...] = ()) -> RunConfig:
    """Read, override, and validate a config file; all problems are collected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    resolved = _defaults()
    problems: list[str] = []
    for section in cp.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
            continue
        for key, text in cp[section].items():
            if key not in _SCHEMA[section]:
                problems.append(f"unknown key {section}.{key}")
                continue
            try:
                resolved[section][key] = _parse_value(_SCHEMA[section][key][0], text, f"{section}.{key}")
            except ConfigError as exc:
                problems.append(str(exc))

    for ov in overrides:
        try:
            apply_override(resolved, ov)
        except ConfigError as exc:
            problems.append(str(exc))

    if problems:
        raise ConfigError("; ".join(problems))
    return build_run_config(resolved)


def apply_override(resolved: dict, override: str) -> tuple[str, object]:
    """Apply one 'section.key=value' override in place."""
    if "=" not in override or "." not in override.split("=", 1)[0]:
        raise ConfigError(f"override {override!r} is not of the form section.key=value")
    target, text = override.split("=", 1)
    section, key = target.split(".", 1)
    if section not in _SCHEMA or key not in _SCHEMA[section]:
        raise ConfigError(f"override targets unknown key {section}.{key}")
    value = _parse_value(_SCHEMA[section][key][0], text, f"{section}.{key}")
    resolved[section][key] = value
    return f"{section}.{key}", value


def build_run_config(resolved: dict) -> RunConfig:
    problems: list[str] = []
    m = resolved["model"]
    s = resolved["schedule"]

    schedule = cur.ImageSizeSchedule(
        initial_size=s["initial_size"], increment=s["increment"],
        period_epochs=s["period_epochs"], final_size=s["final_size"],
        patch_size=m["patch_size"],
    )
    problems.extend(cur.validate(schedule))

    model_config = None
    try:
        model_config = ModelConfig(
            embed_dim=m["embed_dim"], depth=m["depth"], num_heads=m["num_heads"],
            patch_size=m["patch_size"], num_classes=m["num_classes"],
            ffn_kind=m["ffn_kind"], activation=m["activation"],
            final_image_size=s["final_size"], use_class_token=m["use_class_token"],
            gelu_approximate=m["gelu_approximate"],
        )
    except ConfigError as exc:
        problems.append(str(exc))

    budget = None
    try:
        budget = TrainBudget(resolved["budget"]["wall_clock_limit_s"], resolved["budget"]["max_epochs"])
    except ConfigError as exc:
        problems.append(str(exc))

    if resolved["run"]["precision"] not in _PRECISIONS:
        problems.append(f"run.precision must be one of {sorted(_PRECISIONS)}, got {resolved['run']['precision']!r}")
    if resolved["data"]["format"] not in ("synthetic", "image-directory", "binary-record"):
        problems.append(f"data.format {resolved['data']['format']!r} is not a supported source")
    if resolved["data"]["format"] != "synthetic":
        if not resolved["data"]["train_path"]:
            problems.append("data.train_path is required for on-disk datasets")
        if not resolved["data"]["val_path"]:
            problems.append("data.val_path is required for on-disk datasets")
    ev = resolved["run"]["eval_size"]
    if ev is not None and ev % m["patch_size"] != 0:
        problems.append(f"run.eval_size {ev} not divisible by patch size {m['patch_size']}")

    if problems:
        raise ConfigError("; ".join(problems))
    return RunConfig(model_config, schedule, budget, resolved)


def write_frozen_config(cfg: RunConfig, path) -> None:
    """Persist the fully-resolved configuration; reparsing it reproduces the run."""
    lines = []
    for section, keys in cfg.raw.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            if value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def default_config_text() -> str:
    cfg = build_run_config(_defaults())
    lines = []
    for section, keys in cfg.raw.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            if value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
