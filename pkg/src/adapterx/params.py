"""Parameter construction and traversal helpers."""

import dataclasses

import numpy as np

from .tensor import Tensor


class ParamFactory:
    """Creates named parameter tensors from an ``Rng`` stream.

    With ``meta=True`` no values are drawn; each tensor holds a zero-stride
    broadcast view, so a full-size model costs no memory.  Meta models are
    only good for shape and count queries.
    """

    def __init__(self, rng, std=0.02, meta=False):
        self.rng = rng
        self.std = std
        self.meta = meta

    def _make(self, shape, fill, trainable):
        if self.meta:
            data = np.broadcast_to(np.float64(0.0), shape)
        else:
            data = fill()
        return Tensor(data, requires_grad=trainable)

    def trunc_normal(self, shape, trainable, std=None):
        std = self.std if std is None else std
        return self._make(shape, lambda: self.rng.truncated_normal(shape, std), trainable)

    def zeros(self, shape, trainable):
        return self._make(shape, lambda: np.zeros(shape), trainable)

    def ones(self, shape, trainable):
        return self._make(shape, lambda: np.ones(shape), trainable)

    def copy_of(self, tensor, trainable):
        return self._make(tensor.shape, lambda: np.array(tensor.data, copy=True), trainable)


def named_tensors(obj, prefix=""):
    """Yield ``(dotted_name, Tensor)`` for every tensor reachable from ``obj``.

    Walks dataclass fields, lists and tuples.  Aliased tensors are yielded
    each time they are reached; callers dedupe when they need to.
    """
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            if f.metadata.get("skip"):
                continue
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))


def unique_named_tensors(obj, prefix=""):
    seen = set()
    for name, t in named_tensors(obj, prefix):
        if id(t) not in seen:
            seen.add(id(t))
            yield name, t
