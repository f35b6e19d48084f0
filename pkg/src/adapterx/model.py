"""Backbone plus PEFT stack as one object with a flat parameter namespace."""

import copy
from dataclasses import dataclass

from . import tensor as T
from .backbone import encode, init_backbone
from .params import unique_named_tensors
from .peft import build_peft, unshare
from .rng import Rng
from .smoa import balance_loss


@dataclass
class AdapterXModel:
    config: object
    backbone: object
    peft: object = None

    def named_parameters(self):
        """Unique ``(name, tensor)`` pairs; an aliased pool is listed once."""
        seen = set()
        out = []
        for prefix, obj in (("backbone", self.backbone), ("peft", self.peft)):
            if obj is None:
                continue
            for name, t in unique_named_tensors(obj, prefix):
                if id(t) not in seen:
                    seen.add(id(t))
                    out.append((name, t))
        return out

    def trainable(self):
        return [(n, t) for n, t in self.named_parameters() if t.requires_grad]

    def frozen(self):
        return [(n, t) for n, t in self.named_parameters() if not t.requires_grad]

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.grad = None

    def forward(self, batch, records=None, return_features=False):
        return encode(self.backbone, batch, self.peft, records=records, return_features=return_features)

    def reference_logits(self, batch):
        """Bare-backbone logits, zero-padded where this model attaches prompts."""
        pad = self.peft is not None and self.peft.block_specific is not None
        return encode(self.backbone, batch, None, pad_prompt=pad)

    def loss(self, batch, labels, fixed_fractions=None):
        """``(total, task, balance)``; total = task + alpha * balance.

        ``balance`` is a zero tensor for modes without routing.
        """
        records = []
        logits = self.forward(batch, records)
        task = T.cross_entropy(logits, labels)
        if records:
            balance = balance_loss(
                records, self.config.n_experts, self.config.soft_balance_counts, fixed_fractions
            )
            total = task + T.scale(balance, self.config.alpha)
        else:
            balance = T.Tensor(0.0)
            total = task
        return total, task, balance, records

    def unshared_clone(self):
        """Deep copy in which every block owns a private copy of its expert pool."""
        clone = copy.deepcopy(self)
        clone.peft = unshare(clone.peft)
        return clone


def build_model(config, meta=False):
    """Deterministic construction from ``config.seed``.

    The backbone and each PEFT component draw from their own named
    streams, so the backbone is identical across peft modes.
    """
    config.validate()
    rng = Rng(config.seed)
    backbone = init_backbone(config, rng.child("backbone"), meta=meta)
    peft = build_peft(config, backbone, rng.child("peft"), meta=meta)
    return AdapterXModel(config, backbone, peft)

