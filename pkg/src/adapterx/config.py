"""Experiment configuration: dataclasses plus the ``key = value`` file loader.

A config file has up to three sections, ``[model]``, ``[train]`` and
``[task]``.  Every key is optional; unknown keys and unknown sections are
errors.  ``SMOA_SEED`` in the environment replaces ``model.seed``.
"""

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

PEFT_MODES = (
    "full",
    "linear-probe",
    "adapter-serial",
    "adapter-parallel",
    "moa-per-block",
    "smoa",
    "smoa+block-specific",
)
INSERTIONS = ("serial-after-ffn", "parallel-to-ffn")
ACTIVATIONS = ("gelu", "relu")
SCHEDULES = ("cosine", "constant")


@dataclass
class ModelConfig:
    d_model: int = 48
    depth: int = 4
    attn_heads: int = 4
    patch_grid: int = 4
    patch_dim: int = 12
    n_classes: int = 4
    peft_mode: str = "smoa+block-specific"
    rank: int = 8
    n_experts: int = 4
    moa_heads: int = 3
    d_e: int = 0  # 0 means "same as rank"
    alpha: float = 0.01
    insertion: str = "serial-after-ffn"
    parallel_scale: float = 0.1
    parallel_scale_trainable: bool = False
    activation: str = "gelu"
    init_std: float = 0.0  # 0 means 0.02 * sqrt(768 / d_model)
    ln_eps: float = 1e-6
    detach_embedding_norm: bool = False
    soft_balance_counts: bool = False
    top1_routing: bool = False
    accumulate_prompts: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d_e == 0:
            self.d_e = self.rank
        if self.init_std == 0 and self.d_model > 0:
            # Keeps the per-layer gain std*sqrt(d) of a width-768 model at 0.02.
            self.init_std = 0.02 * (768 / self.d_model) ** 0.5

    @property
    def n_patches(self):
        return self.patch_grid * self.patch_grid

    @property
    def seq_len(self):
        """CLS plus patch tokens, before any prompt is attached."""
        return self.n_patches + 1

    @property
    def sub_width(self):
        return self.d_model // self.moa_heads

    @property
    def uses_moa(self):
        return self.peft_mode in ("moa-per-block", "smoa", "smoa+block-specific")

    @property
    def shared_pool(self):
        return self.peft_mode in ("smoa", "smoa+block-specific")

    @property
    def block_specific(self):
        return self.peft_mode == "smoa+block-specific"

    @property
    def uses_adapter(self):
        return self.peft_mode in ("adapter-serial", "adapter-parallel")

    @property
    def effective_insertion(self):
        if self.peft_mode == "adapter-serial":
            return "serial-after-ffn"
        if self.peft_mode == "adapter-parallel":
            return "parallel-to-ffn"
        return self.insertion

    def validate(self):
        for name in ("d_model", "attn_heads", "patch_grid", "patch_dim", "n_classes",
                     "rank", "n_experts", "moa_heads", "d_e"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.depth < 0:
            raise ConfigError("depth", f"must be >= 0, got {self.depth}")
        if self.d_model % self.attn_heads:
            raise ConfigError("attn_heads", f"d_model={self.d_model} is not divisible by {self.attn_heads}")
        if self.d_model % self.moa_heads:
            raise ConfigError("moa_heads", f"d_model={self.d_model} is not divisible by {self.moa_heads}")
        if self.peft_mode not in PEFT_MODES:
            raise ConfigError("peft_mode", f"{self.peft_mode!r} not in {PEFT_MODES}")
        if self.insertion not in INSERTIONS:
            raise ConfigError("insertion", f"{self.insertion!r} not in {INSERTIONS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError("activation", f"{self.activation!r} not in {ACTIVATIONS}")
        if self.alpha < 0:
            raise ConfigError("alpha", f"must be >= 0, got {self.alpha}")
        if self.rank >= self.d_model:
            raise ConfigError("rank", f"bottleneck rank {self.rank} must be < d_model={self.d_model}")
        if self.init_std <= 0 or self.ln_eps <= 0:
            raise ConfigError("init_std" if self.init_std <= 0 else "ln_eps", "must be positive")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        return self


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule: str = "cosine"
    max_steps: int = 0  # 0 means no cap
    eval_batch_size: int = 200

    def validate(self):
        for name in ("epochs", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr", "must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1" if not 0 <= self.beta1 < 1 else "beta2", "must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ConfigError("schedule", f"{self.schedule!r} not in {SCHEDULES}")
        if self.max_steps < 0:
            raise ConfigError("max_steps", "must be >= 0")
        return self


@dataclass
class TaskConfig:
    name: str = "templates"
    seed: int = 1
    n_train: int = 800
    n_val: int = 200
    n_test: int = 200
    noise: float = 1.5
    template_scale: float = 0.5
    position_scale: float = 0.5

    def validate(self):
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise", "must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        return self


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    task: TaskConfig = field(default_factory=TaskConfig)

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.task.validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        """Stable 64-bit hex digest of the full configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.blake2b(blob.encode(), digest_size=8).hexdigest()


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "task": TaskConfig}


def _convert(section, key, raw, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"expected {typ.__name__}, got {raw!r}") from None


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError:
        raise ConfigError("<file>", "keys must appear under a [model], [train] or [task] section") from None
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None

    parts = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(section, f"unknown section; expected one of {sorted(_SECTIONS)}")
        cls = _SECTIONS[section]
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        types = {k: {"int": int, "float": float, "bool": bool, "str": str}.get(t, t) for k, t in types.items()}
        values = {}
        for key, raw in parser.items(section):
            if key not in types:
                raise ConfigError(f"{section}.{key}", "unknown key")
            values[key] = _convert(section, key, raw, types[key])
        parts[section] = cls(**values)
    cfg = ExperimentConfig(**parts)
    seed = os.environ.get("SMOA_SEED")
    if seed is not None:
        cfg.model.seed = _convert("env", "SMOA_SEED", seed, int)
    return cfg.validate()


def load_config(path):
    """Read and validate a config file; defaults fill every omitted key."""
    return parse_config(Path(path).read_text())
