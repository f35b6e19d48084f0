"""Per-block (never shared) pre-FFN LayerNorm and prompt generator."""

from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class BlockParams:
    norm_gamma: Tensor
    norm_beta: Tensor
    pg_scale: Tensor
    pg_shift: Tensor


@dataclass
class BlockSpecificParams:
    blocks: list  # one BlockParams per transformer block

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, k):
        if not 0 <= k < len(self.blocks):
            raise ContractError(f"block index {k} out of range for depth {len(self.blocks)}")
        return self.blocks[k]


def init_block_specific(backbone, factory):
    """Norms start as trainable copies of each block's pre-FFN norm; prompts as identity."""
    d = backbone.config.d_model
    return BlockSpecificParams(
        [
            BlockParams(
                norm_gamma=factory.copy_of(blk.norm2.gamma, True),
                norm_beta=factory.copy_of(blk.norm2.beta, True),
                pg_scale=factory.ones((d,), True),
                pg_shift=factory.zeros((d,), True),
            )
            for blk in backbone.blocks
        ]
    )


def block_norm(params, block_index, x, eps=1e-6):
    p = params[block_index]
    return T.layer_norm(x, p.norm_gamma, p.norm_beta, eps)


def generate_prompt(params, block_index, moa_out):
    """``pg_scale * mean_over_tokens(moa_out) + pg_shift`` as a single token."""
    if moa_out.ndim < 2 or moa_out.shape[-2] < 1:
        raise ContractError(f"generate_prompt: need at least one token, got shape {moa_out.shape}")
    p = params[block_index]
    avg = T.mean(moa_out, axis=-2, keepdims=True)
    return avg * p.pg_scale + p.pg_shift


def attach_prompt(x, p, base_len=None, accumulate=False):
    """Append ``p`` after the tokens of ``x``.

    When ``x`` already ends in a prompt (its length is ``base_len + 1``)
    that prompt is replaced, so the length stays ``base_len + 1``.  With
    ``base_len=None`` or ``accumulate=True`` the prompt is always appended.
    """
    if x.shape[-1] != p.shape[-1]:
        raise DimensionError(f"attach_prompt: token width {x.shape[-1]} vs prompt width {p.shape[-1]}")
    if p.shape[-2] != 1:
        raise DimensionError(f"attach_prompt: prompt must be one token, got shape {p.shape}")
    n = x.shape[-2]
    if not accumulate and base_len is not None and n == base_len + 1:
        x = x[..., :base_len, :]
    elif base_len is not None and n < base_len:
        raise ContractError(f"attach_prompt: sequence of {n} tokens is shorter than base length {base_len}")
    return T.concat([x, p], axis=-2)
