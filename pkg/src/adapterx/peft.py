"""Assembly of the PEFT insertions for each ``peft_mode``."""

import copy
from dataclasses import dataclass, field

from . import tensor as T
from .adapters import adapter_forward, init_adapter, parallel_adapter_forward
from .block_specific import init_block_specific
from .errors import ContractError
from .params import ParamFactory
from .smoa import init_expert_pool, smoa_forward


@dataclass
class PeftStack:
    """Per-block insertions hosted by the backbone's FFN stage.

    ``pools`` has one entry per block.  In shared modes every entry is the
    same ``ExpertPool`` object, so an update to it reaches every block.
    """

    mode: str = field(metadata={"skip": True})
    insertion: str = field(metadata={"skip": True})
    scale: object = 1.0  # float, or a trainable 0-d Tensor
    activation: str = field(default="gelu", metadata={"skip": True})
    adapters: list = None
    pools: list = None
    block_specific: object = None
    top1: bool = field(default=False, metadata={"skip": True})
    detach_norm: bool = field(default=False, metadata={"skip": True})
    accumulate_prompts: bool = field(default=False, metadata={"skip": True})

    @property
    def inserts(self):
        return bool(self.adapters) or bool(self.pools)

    @property
    def serial(self):
        return self.insertion == "serial-after-ffn"

    @property
    def shared(self):
        return bool(self.pools) and all(p is self.pools[0] for p in self.pools)

    def ffn_stage(self, k, h, f, records=None):
        """Combine the FFN output ``f`` of block ``k`` with this block's insertion.

        ``h`` is the residual stream entering the FFN stage (before its
        norm).  Returns the new FFN-stage output and the raw insertion
        output (``None`` for plain adapters).
        """
        act = T.activation(self.activation)
        if self.adapters:
            a = self.adapters[k]
            if self.serial:
                return adapter_forward(a, f, act), None
            return parallel_adapter_forward(a, h, f, self.scale, act), None
        src = f if self.serial else h
        delta, record = smoa_forward(self.pools[k], src, k, act, self.top1, self.detach_norm)
        if records is not None:
            records.append(record)
        if self.serial:
            return f + delta, delta
        return f + delta * self.scale, delta


def _scale(config, factory):
    if config.parallel_scale_trainable:
        t = factory.zeros((), True)
        if not factory.meta:
            t.data[...] = config.parallel_scale
        return t
    return config.parallel_scale


def _stack(config, **kw):
    return PeftStack(
        mode=config.peft_mode,
        insertion=config.effective_insertion,
        activation=config.activation,
        top1=config.top1_routing,
        detach_norm=config.detach_embedding_norm,
        accumulate_prompts=config.accumulate_prompts,
        **kw,
    )


def build_shared_moa(config, rng, meta=False):
    pool = init_expert_pool(config, ParamFactory(rng.child("pool"), config.init_std, meta))
    return [pool] * config.depth


def build_per_block_moa(config, rng, meta=False):
    """One independent pool per block.

    Every pool is drawn from the same stream as the shared pool, so at
    construction the clones equal the shared variant's pool value for value.
    """
    if config.peft_mode not in ("moa-per-block", "smoa", "smoa+block-specific"):
        raise ContractError(f"per-block mixture needs a mixture peft_mode, got {config.peft_mode!r}")
    return [
        init_expert_pool(config, ParamFactory(rng.child("pool"), config.init_std, meta))
        for _ in range(config.depth)
    ]


def build_peft(config, backbone, rng, meta=False):
    """The ``PeftStack`` for ``config.peft_mode``; None for full and linear-probe."""
    mode = config.peft_mode
    if mode in ("full", "linear-probe"):
        return None
    factory = ParamFactory(rng.child("misc"), config.init_std, meta)
    scale = _scale(config, factory)
    if mode in ("adapter-serial", "adapter-parallel"):
        adapters = [
            init_adapter(ParamFactory(rng.child(f"adapter/{k}"), config.init_std, meta), config.d_model, config.rank)
            for k in range(config.depth)
        ]
        return _stack(config, scale=scale, adapters=adapters)
    if mode == "moa-per-block":
        return _stack(config, scale=scale, pools=build_per_block_moa(config, rng, meta))
    pools = build_shared_moa(config, rng, meta)
    block_specific = None
    if mode == "smoa+block-specific":
        block_specific = init_block_specific(backbone, ParamFactory(rng.child("block"), config.init_std, meta))
    return _stack(config, scale=scale, pools=pools, block_specific=block_specific)


def unshare(stack):
    """Copy of ``stack`` where each block owns a private copy of the pool it used."""
    if not stack.pools:
        raise ContractError("unshare: stack has no expert pools")
    out = copy.copy(stack)
    out.pools = [copy.deepcopy(p) for p in stack.pools]
    return out
