"""Shared multi-head mixture of adapters.

A single ``ExpertPool`` (experts, expert embeddings, router projection)
serves every transformer block.  Each token is cut into ``heads``
contiguous sub-tokens, every sub-token is projected to the low-dimensional
embedding space, scored against the L2-normalised expert embeddings, and
the experts' outputs are mixed with the softmax of those scores.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .adapters import adapter_delta, init_adapter
from .errors import ConfigError, ContractError, DimensionError, NumericalError
from .tensor import Tensor

NORM_GUARD = 1e-12


@dataclass
class ExpertPool:
    experts: list  # AdapterWeights acting on sub-tokens of width d / heads
    embeddings: Tensor  # (N, d_e)
    router: Tensor  # (d_e, d / heads), no bias
    heads: int = field(default=1, metadata={"skip": True})

    @property
    def n_experts(self):
        return len(self.experts)

    @property
    def d_e(self):
        return self.embeddings.shape[1]

    @property
    def sub_width(self):
        return self.router.shape[1]


def init_expert_pool(config, factory, trainable=True):
    sub = config.d_model // config.moa_heads
    experts = [init_adapter(factory, sub, config.rank, trainable) for _ in range(config.n_experts)]
    embeddings = factory.trunc_normal((config.n_experts, config.d_e), trainable, std=1.0)
    router = factory.trunc_normal((config.d_e, sub), trainable)
    return ExpertPool(experts, embeddings, router, heads=config.moa_heads)


@dataclass
class RoutingRecord:
    """Routing of every sub-token in one block application.

    Rows of ``gates`` follow the split order: sub-token ``(s, t, j)`` of
    sequence ``s``, token ``t``, head ``j`` sits at row
    ``(s * seq_len + t) * heads + j``.
    """

    block_index: int
    gates: Tensor  # (m, N), differentiable
    argmax: np.ndarray  # (m,), ties go to the lowest index
    n_seqs: int
    seq_len: int
    heads: int

    @property
    def n_sub_tokens(self):
        return self.gates.shape[0]

    def sub_token_index(self, row):
        seq, rem = divmod(row, self.seq_len * self.heads)
        token, head = divmod(rem, self.heads)
        return seq, token, head

    def rows(self):
        """Yield ``(block, (seq, token, head), gate_vector, argmax)`` per sub-token."""
        g = self.gates.data
        for row in range(self.n_sub_tokens):
            yield self.block_index, self.sub_token_index(row), g[row], int(self.argmax[row])


# ---------------------------------------------------------------- token split


def split_tokens(x, h):
    """``(..., l, d) -> (prod(...) * l * h, d / h)``; token-major, then head order."""
    d = x.shape[-1]
    if h < 1 or d % h:
        raise ConfigError("moa_heads", f"{h} does not divide token width {d}")
    return T.reshape(x, (-1, d // h))


def merge_tokens(xs, h, lead_shape=None):
    """Inverse of ``split_tokens``; ``lead_shape`` restores batch axes (default ``(l,)``)."""
    m, w = xs.shape
    if h < 1 or m % h:
        raise DimensionError(f"merge_tokens: {m} sub-tokens not divisible by {h} heads")
    if lead_shape is None:
        lead_shape = (m // h,)
    return T.reshape(xs, tuple(lead_shape) + (w * h,))


# ---------------------------------------------------------------- routing


def normalized_embeddings(pool, detach_norm=False):
    norms = np.sqrt((pool.embeddings.data**2).sum(axis=1))
    if (norms < NORM_GUARD).any():
        bad = int(np.argmin(norms))
        raise NumericalError(f"expert embedding {bad} has (near) zero norm {norms[bad]:.3e}")
    return T.l2_normalize(pool.embeddings, axis=1, detach_norm=detach_norm)


def route_scores(pool, xs, detach_norm=False):
    """Scores ``(W x) . e_i / ||e_i||`` for every sub-token row of ``xs``."""
    if xs.shape[-1] != pool.sub_width:
        raise DimensionError(f"route_scores: sub-token width {xs.shape[-1]} != {pool.sub_width}")
    projected = T.matmul(xs, T.transpose(pool.router))
    return T.matmul(projected, T.transpose(normalized_embeddings(pool, detach_norm)))


def gate(scores):
    return T.softmax(scores, axis=-1)


def smoa_forward(pool, x, block_index, act=T.gelu, top1=False, detach_norm=False):
    """Mix expert outputs per sub-token; returns the contribution (no residual) and its record.

    ``x`` is ``(l, d)`` or ``(b, l, d)``.  With ``top1`` only the arg-max
    expert contributes, still weighted by its gate value.
    """
    lead = x.shape[:-1]
    xs = split_tokens(x, pool.heads)
    g = gate(route_scores(pool, xs, detach_norm))
    top = np.argmax(g.data, axis=1)
    weights = g
    if top1:
        mask = np.zeros(g.shape)
        mask[np.arange(len(top)), top] = 1.0
        weights = g * mask
    out = None
    for i, expert in enumerate(pool.experts):
        term = weights[:, i : i + 1] * adapter_delta(expert, xs, act)
        out = term if out is None else out + term
    n_seqs = int(np.prod(lead[:-1])) if len(lead) > 1 else 1
    record = RoutingRecord(block_index, g, top, n_seqs, lead[-1], pool.heads)
    return merge_tokens(out, pool.heads, lead), record


# ---------------------------------------------------------------- balance


def expert_fractions(record, n_experts, soft=False):
    """Share of sub-tokens per expert: arg-max counts, or mean gates when ``soft``."""
    if soft:
        return record.gates.data.mean(axis=0)
    return np.bincount(record.argmax, minlength=n_experts) / record.n_sub_tokens


def balance_loss(records, n_experts, soft_counts=False, fixed_fractions=None):
    """Load-balancing loss averaged over block applications.

    Per application: ``N * sum_p t_p * mean_x g_p(x)``, where ``t_p`` is a
    constant.  ``fixed_fractions`` supplies ``t`` explicitly (one array per
    record), e.g. to hold it still while finite-differencing.
    """
    if not records:
        raise ContractError("balance_loss: no routing records")
    terms = []
    for k, rec in enumerate(records):
        if fixed_fractions is not None:
            t = np.asarray(fixed_fractions[k], dtype=np.float64)
        else:
            t = expert_fractions(rec, n_experts, soft_counts)
        mean_gate = T.mean(rec.gates, axis=0)
        terms.append(T.scale(T.tsum(mean_gate * t), n_experts))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return T.scale(total, 1.0 / len(terms))


# ---------------------------------------------------------------- statistics

LOAD_HEADER = ("block", "expert", "fraction")
PATH_HEADER = ("token_id", "block", "expert", "gate")


@dataclass
class StatsTable:
    load_rows: list  # (block, expert, fraction)
    path_rows: list  # (token_id, block, expert, gate)

    def load_matrix(self):
        blocks = sorted({r[0] for r in self.load_rows})
        experts = sorted({r[1] for r in self.load_rows})
        out = np.zeros((len(blocks), len(experts)))
        for b, e, f in self.load_rows:
            out[blocks.index(b), experts.index(e)] = f
        return out

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "expert_load.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOAD_HEADER)
            w.writerows((b, e, repr(float(f))) for b, e, f in self.load_rows)
        with open(out_dir / "token_paths.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PATH_HEADER)
            w.writerows((t, b, e, repr(float(g))) for t, b, e, g in self.path_rows)
        return out_dir / "expert_load.csv", out_dir / "token_paths.csv"


def routing_stats(records, base_len=None, path_seqs=None):
    """Per-block expert load and per-token gate paths.

    ``base_len`` is the number of leading positions that are real tokens
    (CLS + patches); prompt positions beyond it count toward load but are
    left out of paths.  ``token_id`` numbers sub-tokens of real tokens
    across all records seen for a block, so the same id names the same
    sub-token in every block.  Only the first ``path_seqs`` sequences get
    path rows (all of them when None).
    """
    counts, offsets = {}, {}
    paths = []
    for rec in records:
        n_exp = rec.gates.shape[1]
        blk = rec.block_index
        counts.setdefault(blk, np.zeros(n_exp))
        counts[blk] += np.bincount(rec.argmax, minlength=n_exp)
        offset = offsets.get(blk, 0)
        offsets[blk] = offset + rec.n_seqs
        blen = rec.seq_len if base_len is None else min(base_len, rec.seq_len)
        g = rec.gates.data.reshape(rec.n_seqs, rec.seq_len, rec.heads, n_exp)
        for s in range(rec.n_seqs):
            seq = offset + s
            if path_seqs is not None and seq >= path_seqs:
                break
            for t in range(blen):
                for j in range(rec.heads):
                    token_id = (seq * blen + t) * rec.heads + j
                    for e in range(n_exp):
                        paths.append((token_id, blk, e, float(g[s, t, j, e])))
    load = []
    for blk in sorted(counts):
        frac = counts[blk] / counts[blk].sum()
        load.extend((blk, e, float(f)) for e, f in enumerate(frac))
    paths.sort(key=lambda r: (r[0], r[1], r[2]))
    return StatsTable(load, paths)
