"""Small shapes shared by the unit tests."""

import numpy as np

from adapterx.config import ModelConfig


def small_model_config(**kw):
    """A shrunken toy shape that keeps every mechanism but runs fast."""
    base = dict(d_model=12, depth=2, attn_heads=2, patch_grid=2, patch_dim=3, n_classes=3, rank=2, moa_heads=3)
    base.update(kw)
    return ModelConfig(**base).validate()


def small_batch(cfg, b=2, seed=0):
    r = np.random.default_rng(seed)
    return r.standard_normal((b, cfg.n_patches, cfg.patch_dim)), r.integers(0, cfg.n_classes, b)
