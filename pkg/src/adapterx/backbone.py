"""A small pre-norm ViT encoder that hosts the PEFT insertions."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .block_specific import attach_prompt, block_norm, generate_prompt
from .errors import ContractError, DimensionError
from .params import ParamFactory
from .tensor import Tensor


@dataclass
class Linear:
    w: Tensor  # (d_in, d_out)
    b: Tensor

    def __call__(self, x):
        return T.matmul(x, self.w) + self.b


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class Attention:
    q: Linear
    k: Linear
    v: Linear
    o: Linear


@dataclass
class FFN:
    fc1: Linear
    fc2: Linear


@dataclass
class Block:
    norm1: LayerNormParams
    attn: Attention
    norm2: LayerNormParams
    ffn: FFN


@dataclass
class Backbone:
    config: object = field(metadata={"skip": True})
    patch_embed: Linear
    cls_token: Tensor  # (d,)
    pos_embed: Tensor  # (L + 1, d)
    blocks: list
    head: Linear


def _linear(f, d_in, d_out, trainable):
    return Linear(f.trunc_normal((d_in, d_out), trainable), f.zeros((d_out,), trainable))


def _norm(f, d, trainable):
    return LayerNormParams(f.ones((d,), trainable), f.zeros((d,), trainable))


def init_backbone(config, rng, meta=False):
    """Draw backbone weights; all frozen except the head unless ``peft_mode == 'full'``."""
    config.validate()
    f = ParamFactory(rng, std=config.init_std, meta=meta)
    d = config.d_model
    train = config.peft_mode == "full"
    patch_embed = _linear(f, config.patch_dim, d, train)
    cls_token = f.trunc_normal((d,), train)
    pos_embed = f.trunc_normal((config.seq_len, d), train)
    blocks = []
    for _ in range(config.depth):
        blocks.append(
            Block(
                norm1=_norm(f, d, train),
                attn=Attention(*(_linear(f, d, d, train) for _ in range(4))),
                norm2=_norm(f, d, train),
                ffn=FFN(_linear(f, d, 4 * d, train), _linear(f, 4 * d, d, train)),
            )
        )
    head = _linear(f, d, config.n_classes, True)
    return Backbone(config, patch_embed, cls_token, pos_embed, blocks, head)


def attention(attn, x, n_heads):
    b, n, d = x.shape
    dh = d // n_heads

    def heads(t):
        return T.transpose(T.reshape(t, (b, n, n_heads, dh)), (0, 2, 1, 3))

    q, k, v = heads(attn.q(x)), heads(attn.k(x)), heads(attn.v(x))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    ctx = T.matmul(T.softmax(scores, axis=-1), v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return attn.o(ctx)


def ffn(params, x, act=T.gelu):
    return params.fc2(act(params.fc1(x)))


def embed(backbone, batch):
    cfg = backbone.config
    batch = T.as_tensor(batch)
    if batch.ndim != 3 or batch.shape[1:] != (cfg.n_patches, cfg.patch_dim):
        raise DimensionError(
            f"encode: expected batch of shape (b, {cfg.n_patches}, {cfg.patch_dim}), got {batch.shape}"
        )
    b = batch.shape[0]
    tokens = backbone.patch_embed(batch)
    cls = T.broadcast_to(T.reshape(backbone.cls_token, (1, 1, cfg.d_model)), (b, 1, cfg.d_model))
    return T.concat([cls, tokens], axis=1) + backbone.pos_embed


def encode(backbone, batch, peft=None, *, pad_prompt=False, records=None, return_features=False):
    """Class logits ``(b, n_classes)`` read from the CLS position after the last block.

    ``peft`` is a ``PeftStack`` or None for the bare encoder.
    ``pad_prompt`` appends a zero token after every block, the bare-encoder
    counterpart of a prompt-generating stack.  Routing records are appended
    to ``records`` when a list is given.
    """
    cfg = backbone.config
    h = embed(backbone, batch)
    b = h.shape[0]
    base_len = cfg.seq_len
    bs = peft.block_specific if peft is not None else None
    for k, blk in enumerate(backbone.blocks):
        h = h + attention(blk.attn, T.layer_norm(h, blk.norm1.gamma, blk.norm1.beta, cfg.ln_eps), cfg.attn_heads)
        if bs is not None:
            normed = block_norm(bs, k, h, cfg.ln_eps)
        else:
            normed = T.layer_norm(h, blk.norm2.gamma, blk.norm2.beta, cfg.ln_eps)
        f = ffn(blk.ffn, normed)
        delta = None
        if peft is not None and peft.inserts:
            f, delta = peft.ffn_stage(k, h, f, records)
        h = h + f
        if bs is not None:
            prompt = generate_prompt(bs, k, delta[:, :base_len, :])
            h = attach_prompt(h, prompt, base_len, peft.accumulate_prompts)
            if not peft.accumulate_prompts and h.shape[1] != base_len + 1:
                raise ContractError(f"block {k}: sequence length {h.shape[1]}, expected {base_len + 1}")
        elif pad_prompt:
            h = attach_prompt(h, Tensor(np.zeros((b, 1, cfg.d_model))), base_len)
    features = h[:, 0, :]
    logits = backbone.head(features)
    return (logits, features) if return_features else logits

