"""Parameter accounting with closed-form cross-checks.

Every parameter is assigned to a component by its name.  For each
component the ledger reports trainable and frozen counts from a walk over
the model and the closed-form count for the config; the two must agree.
The headline number excludes the classifier head.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError

COMPONENTS = (
    "patch_embed", "cls_pos_embed", "attention", "block_norms", "ffn", "head",
    "adapters", "moa_experts", "moa_router", "moa_embeddings", "block_specific", "parallel_scale",
)
BACKBONE = ("patch_embed", "cls_pos_embed", "attention", "block_norms", "ffn")


def component_of(name):
    parts = name.split(".")
    if parts[0] == "backbone":
        if parts[1] == "patch_embed":
            return "patch_embed"
        if parts[1] in ("cls_token", "pos_embed"):
            return "cls_pos_embed"
        if parts[1] == "head":
            return "head"
        if parts[1] == "blocks":
            return {"attn": "attention", "norm1": "block_norms", "norm2": "block_norms", "ffn": "ffn"}[parts[3]]
    if parts[0] == "peft":
        if parts[1] == "adapters":
            return "adapters"
        if parts[1] == "pools":
            return {"experts": "moa_experts", "router": "moa_router", "embeddings": "moa_embeddings"}[parts[3]]
        if parts[1] == "block_specific":
            return "block_specific"
        if parts[1] == "scale":
            return "parallel_scale"
    raise ContractError(f"parameter {name!r} belongs to no ledger component")


def closed_form(config):
    """``{component: (formula, count)}`` for the components present under ``config``."""
    d, L, depth, r = config.d_model, config.n_patches, config.depth, config.rank
    n, h, de = config.n_experts, config.moa_heads, config.d_e
    w = d // h
    out = {
        "patch_embed": ("patch_dim*d + d", config.patch_dim * d + d),
        "cls_pos_embed": ("d + (L+1)*d", d + (L + 1) * d),
        "attention": ("depth*4*(d*d + d)", depth * 4 * (d * d + d)),
        "block_norms": ("depth*4*d", depth * 4 * d),
        "ffn": ("depth*(8*d*d + 5*d)", depth * (8 * d * d + 5 * d)),
        "head": ("d*n_classes + n_classes", d * config.n_classes + config.n_classes),
    }
    mode = config.peft_mode
    if mode in ("adapter-serial", "adapter-parallel"):
        out["adapters"] = ("depth*(2*d*r + d + r)", depth * (2 * d * r + d + r))
    if config.uses_moa:
        copies, tag = (depth, "depth*") if mode == "moa-per-block" else (1, "")
        out["moa_experts"] = (f"{tag}N*(2*(d/h)*r + d/h + r)", copies * n * (2 * w * r + w + r))
        out["moa_router"] = (f"{tag}d_e*(d/h)", copies * de * w)
        out["moa_embeddings"] = (f"{tag}N*d_e", copies * n * de)
    if mode == "smoa+block-specific":
        out["block_specific"] = ("depth*(2*d + 2*d)", depth * 4 * d)
    if mode not in ("full", "linear-probe") and config.parallel_scale_trainable:
        out["parallel_scale"] = ("1", 1)
    return out


def trainable_components(config):
    """Components whose parameters are trained under ``config.peft_mode``."""
    present = set(closed_form(config))
    if config.peft_mode == "full":
        return present
    return present - set(BACKBONE)


def shared_pool_count(config):
    """Closed-form size of one expert pool (experts, router, embeddings)."""
    d, h, r, n, de = config.d_model, config.moa_heads, config.rank, config.n_experts, config.d_e
    w = d // h
    return n * (2 * w * r + w + r) + de * w + n * de


@dataclass
class LedgerRow:
    component: str
    trainable: int
    frozen: int
    formula: str
    formula_count: int

    @property
    def total(self):
        return self.trainable + self.frozen


@dataclass
class ParamLedger:
    rows: list = field(default_factory=list)
    traversal_total: int = 0

    @property
    def total_trainable(self):
        return sum(r.trainable for r in self.rows)

    @property
    def total_frozen(self):
        return sum(r.frozen for r in self.rows)

    @property
    def total(self):
        return self.total_trainable + self.total_frozen

    @property
    def headline(self):
        """Trainable parameters excluding the classifier head."""
        return sum(r.trainable for r in self.rows if r.component != "head")

    @property
    def full_finetune(self):
        """What full fine-tuning would train, head excluded."""
        return sum(r.total for r in self.rows if r.component in BACKBONE)

    @property
    def ratio(self):
        return self.headline / self.full_finetune if self.full_finetune else float("nan")

    def row(self, component):
        for r in self.rows:
            if r.component == component:
                return r
        raise KeyError(component)

    def verify(self):
        if self.total != self.traversal_total:
            raise ContractError(f"ledger rows sum to {self.total}, traversal counts {self.traversal_total}")
        for r in self.rows:
            if r.total != r.formula_count:
                raise ContractError(
                    f"{r.component}: traversal count {r.total} != closed form {r.formula} = {r.formula_count}"
                )
        return self

    def format_table(self):
        lines = [f"{'component':<16}{'trainable':>12}{'frozen':>12}  formula"]
        for r in self.rows:
            lines.append(f"{r.component:<16}{r.trainable:>12,}{r.frozen:>12,}  {r.formula} = {r.formula_count:,}")
        lines.append(f"{'total':<16}{self.total_trainable:>12,}{self.total_frozen:>12,}")
        lines.append(f"headline (trainable, excluding head): {self.headline:,} = {self.headline / 1e6:.2f}M")
        lines.append(f"ratio vs full fine-tuning: {self.ratio:.4%}")
        return "\n".join(lines)

    def write_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("component", "trainable", "frozen", "formula", "formula_count"))
            for r in self.rows:
                w.writerow((r.component, r.trainable, r.frozen, r.formula, r.formula_count))
            w.writerow(("headline_excluding_head", self.headline, "", "", ""))
            w.writerow(("full_finetune_excluding_head", self.full_finetune, "", "", ""))
        return path


def count_params(model):
    """Ledger for ``model``, verified against the closed forms of its config."""
    counts = {}
    traversal = 0
    for name, t in model.named_parameters():
        comp = component_of(name)
        tr, fr = counts.get(comp, (0, 0))
        if t.requires_grad:
            tr += t.size
        else:
            fr += t.size
        counts[comp] = (tr, fr)
        traversal += t.size
    forms = closed_form(model.config)
    unexpected = set(counts) - set(forms)
    if unexpected:
        raise ContractError(f"components {sorted(unexpected)} have no closed form under {model.config.peft_mode}")
    rows = []
    for comp in COMPONENTS:
        if comp in forms:
            tr, fr = counts.get(comp, (0, 0))
            rows.append(LedgerRow(comp, tr, fr, *forms[comp]))
    return ParamLedger(rows, traversal).verify()
