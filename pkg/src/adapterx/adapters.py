"""Bottleneck adapters and the dense mixture-of-experts building blocks."""

from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class AdapterWeights:
    """Down-projection ``w_down`` (r x d), up-projection ``w_up`` (d x r), with biases."""

    w_down: Tensor
    b_down: Tensor
    w_up: Tensor
    b_up: Tensor

    @property
    def width(self):
        return self.w_down.shape[1]

    @property
    def rank(self):
        return self.w_down.shape[0]


def init_adapter(factory, d, r, trainable=True):
    """Truncated-normal down-projection, zero up-projection, zero biases."""
    return AdapterWeights(
        w_down=factory.trunc_normal((r, d), trainable),
        b_down=factory.zeros((r,), trainable),
        w_up=factory.zeros((d, r), trainable),
        b_up=factory.zeros((d,), trainable),
    )


def _check_width(a, x):
    if x.shape[-1] != a.width:
        raise DimensionError(f"adapter expects last axis {a.width}, got input of shape {x.shape}")


def adapter_delta(a, x, act=T.gelu):
    """Adapter branch without the residual: ``W_up act(W_down x + b_down) + b_up``."""
    _check_width(a, x)
    hidden = act(T.matmul(x, T.transpose(a.w_down)) + a.b_down)
    return T.matmul(hidden, T.transpose(a.w_up)) + a.b_up


def adapter_forward(a, x, act=T.gelu):
    return adapter_delta(a, x, act) + x


def parallel_adapter_forward(a, x_pre_norm, ffn_out, s, act=T.gelu):
    """``ffn_out + s * branch(x_pre_norm)``; the block adds the outer residual."""
    if x_pre_norm.shape[-1] != ffn_out.shape[-1]:
        raise DimensionError(f"parallel adapter: {x_pre_norm.shape} vs ffn output {ffn_out.shape}")
    return ffn_out + adapter_delta(a, x_pre_norm, act) * s


def moe_gate(h, embeddings):
    """Softmax over experts of the dot products ``h . e_i``."""
    h, embeddings = T.as_tensor(h), T.as_tensor(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[1] != h.shape[-1]:
        raise DimensionError(f"moe_gate: embeddings {embeddings.shape} vs hidden {h.shape}")
    return T.softmax(T.matmul(h, T.transpose(embeddings)), axis=-1)


def moe_layer_forward(h, experts, embeddings, act=T.gelu):
    """``h + sum_i gate_i * E_i(h)`` over every expert; experts carry no residual."""
    if not experts:
        raise ContractError("moe_layer_forward: expert list is empty")
    h = T.as_tensor(h)
    if embeddings.shape[0] != len(experts):
        raise DimensionError(f"moe_layer_forward: {len(experts)} experts but {embeddings.shape[0]} embeddings")
    g = moe_gate(h, embeddings)
    out = h
    for i, expert in enumerate(experts):
        out = out + g[..., i : i + 1] * adapter_delta(expert, h, act)
    return out
