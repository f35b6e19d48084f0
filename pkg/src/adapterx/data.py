"""Synthetic patch-classification tasks standing in for a real benchmark.

Each class owns one random template patch, repeated at every patch
position.  A sample is its class template plus a fixed position pattern
shared by all classes plus isotropic Gaussian noise on every entry.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng


@dataclass
class SyntheticTask:
    name: str = "templates"
    seed: int = 1
    n_classes: int = 4
    n_train: int = 800
    n_val: int = 200
    n_test: int = 200
    n_patches: int = 16
    patch_dim: int = 12
    noise: float = 1.5
    template_scale: float = 0.5
    position_scale: float = 0.5

    @classmethod
    def from_config(cls, cfg):
        """Task for an ``ExperimentConfig``; shapes come from its model section."""
        t, m = cfg.task, cfg.model
        return cls(
            name=t.name, seed=t.seed, n_classes=m.n_classes,
            n_train=t.n_train, n_val=t.n_val, n_test=t.n_test,
            n_patches=m.n_patches, patch_dim=m.patch_dim,
            noise=t.noise, template_scale=t.template_scale, position_scale=t.position_scale,
        )


@dataclass
class Split:
    x: np.ndarray  # (n, n_patches, patch_dim)
    y: np.ndarray  # (n,) int

    def __len__(self):
        return len(self.y)


@dataclass
class TaskData:
    task: SyntheticTask
    templates: np.ndarray  # (n_classes, n_patches, patch_dim)
    position: np.ndarray  # (n_patches, patch_dim)
    train: Split
    val: Split
    test: Split

    def split(self, name):
        if name not in ("train", "val", "test"):
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)


def position_pattern(n_patches, patch_dim):
    t = np.arange(n_patches)[:, None] + 1.0
    j = np.arange(patch_dim)[None, :] + 1.0
    return np.sin(np.pi * t * j / (n_patches + 1))


def _balanced_labels(rng, n, n_classes):
    labels = np.arange(n) % n_classes
    return labels[rng.permutation(n)]


def make_task(task):
    if task.name != "templates":
        raise ConfigError("task.name", f"unknown task {task.name!r}; only 'templates' exists")
    for split in ("n_train", "n_val", "n_test"):
        if getattr(task, split) < task.n_classes:
            raise ConfigError(f"task.{split}", f"must be >= n_classes={task.n_classes}")
    if task.n_classes < 2:
        raise ConfigError("model.n_classes", "a task needs at least two classes")
    rng = Rng(task.seed)
    shape = (task.n_patches, task.patch_dim)
    patch = rng.child("templates").normal((task.n_classes, 1, task.patch_dim), std=task.template_scale)
    templates = np.repeat(patch, task.n_patches, axis=1)
    position = task.position_scale * position_pattern(*shape)

    def draw(name, n):
        r = rng.child(name)
        y = _balanced_labels(r, n, task.n_classes)
        noise = r.normal((n,) + shape, std=1.0) * task.noise
        return Split(templates[y] + position + noise, y)

    return TaskData(
        task, templates, position,
        draw("train", task.n_train), draw("val", task.n_val), draw("test", task.n_test),
    )


def nearest_template_predict(data, x):
    """Label of the closest class template; the Bayes rule under isotropic noise."""
    diff = x[:, None] - (data.templates + data.position)[None]
    return np.argmin((diff**2).sum(axis=(2, 3)), axis=1)
