import csv

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adapterx.config import PEFT_MODES, ModelConfig, load_config
from adapterx.errors import ContractError
from adapterx.ledger import closed_form, component_of, count_params, shared_pool_count
from adapterx.model import build_model

VITB = dict(d_model=768, depth=12, attn_heads=12, patch_grid=14, patch_dim=768, n_classes=100)


def ledger(**kw):
    return count_params(build_model(ModelConfig(**kw), meta=True))


@pytest.mark.parametrize("rank, expected", [(64, 1_189_632), (8, 156_768)])
def test_vitb_serial_adapter(rank, expected):
    led = ledger(peft_mode="adapter-serial", rank=rank, **VITB)
    assert led.headline == expected == 12 * (2 * 768 * rank + 768 + rank)


def test_vitb_backbone_size():
    led = ledger(peft_mode="full", **VITB)
    assert led.full_finetune == 85_797_120  # ViT-B/16 encoder with 197 positions, no final norm


def test_toy_smoa_block_specific():
    led = ledger()
    assert led.row("moa_experts").trainable == 4 * (2 * 16 * 8 + 16 + 8) == 1120
    assert led.row("moa_router").trainable == 8 * 16
    assert led.row("moa_embeddings").trainable == 4 * 8
    assert led.row("block_specific").trainable == 4 * 4 * 48
    assert led.headline == 2048
    assert led.row("head").trainable == 48 * 4 + 4
    assert led.ratio < 0.10


def test_sharing_efficiency_at_depth_12():
    base = dict(VITB, rank=64)
    shared = ledger(peft_mode="smoa", **base)
    per = ledger(peft_mode="moa-per-block", **base)
    pool = shared_pool_count(ModelConfig(**base))
    assert shared.headline == pool
    assert per.headline == 12 * pool
    assert per.headline / shared.headline == 12


def test_linear_probe_and_full():
    lp = ledger(peft_mode="linear-probe")
    assert lp.headline == 0 and lp.total_trainable == lp.row("head").trainable
    full = ledger(peft_mode="full")
    assert full.headline == full.full_finetune and full.total_frozen == 0


def test_trainable_parallel_scale_component():
    led = ledger(peft_mode="adapter-parallel", parallel_scale_trainable=True)
    assert led.row("parallel_scale").trainable == 1


def test_unknown_parameter_name():
    with pytest.raises(ContractError):
        component_of("optimizer.state")


def test_meta_and_real_counts_agree():
    cfg = ModelConfig()
    assert count_params(build_model(cfg)).rows == count_params(build_model(cfg, meta=True)).rows


def test_config_files(tmp_path):
    led = count_params(build_model(load_config("configs/vitb_adapter64.cfg").model, meta=True))
    assert led.headline == 1_189_632
    path = led.write_csv(tmp_path / "ledger.csv")
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["component", "trainable", "frozen", "formula", "formula_count"]
    assert ["headline_excluding_head", "1189632", "", "", ""] in rows


configs = st.builds(
    lambda heads, mult, depth, grid, pd, ncls, mode, rank, n, de, pscale: ModelConfig(
        d_model=heads * mult, depth=depth, attn_heads=heads, patch_grid=grid, patch_dim=pd,
        n_classes=ncls, peft_mode=mode, rank=min(rank, heads * mult - 1), n_experts=n,
        moa_heads=3 if mult % 3 == 0 else 1, d_e=de, parallel_scale_trainable=pscale,
    ),
    st.sampled_from([1, 2, 4]), st.sampled_from([3, 6, 12, 24]), st.integers(0, 5), st.integers(1, 4),
    st.integers(1, 10), st.integers(2, 7), st.sampled_from(PEFT_MODES), st.integers(1, 16),
    st.integers(1, 5), st.integers(0, 6), st.booleans(),
)


@given(configs)
def test_formulas_match_traversal(cfg):
    led = count_params(build_model(cfg, meta=True))  # verify() raises on any mismatch
    assert led.total == led.traversal_total
    assert {r.component for r in led.rows} == set(closed_form(cfg))
    assert all(r.total == r.formula_count for r in led.rows)
