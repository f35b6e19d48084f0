import numpy as np
import pytest

from adapterx.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from adapterx.errors import ContractError
from adapterx.model import build_model

from helpers import small_batch, small_model_config


def test_round_trip(tmp_path):
    cfg = small_model_config()
    m = build_model(cfg)
    for _, t in m.trainable():
        t.data = t.data + 0.1
    path = tmp_path / "ck.npz"
    save_checkpoint(m, path, "abc")
    meta, values = read_checkpoint(path)
    assert meta["format"] == 1 and meta["config_hash"] == "abc"
    assert meta["params"]["backbone.head.w"] == {"shape": [12, 3], "frozen": False}
    assert meta["params"]["backbone.blocks.0.attn.q.w"]["frozen"] is True
    fresh = build_model(cfg)
    load_checkpoint(fresh, path)
    x, _ = small_batch(cfg)
    np.testing.assert_array_equal(fresh.forward(x).data, m.forward(x).data)


def test_shared_pool_stored_once_and_still_aliased(tmp_path):
    cfg = small_model_config(peft_mode="smoa")
    m = build_model(cfg)
    path = tmp_path / "ck.npz"
    save_checkpoint(m, path)
    _, values = read_checkpoint(path)
    assert not any(k.startswith("peft.pools.1.") for k in values)
    fresh = build_model(cfg)
    load_checkpoint(fresh, path)
    assert all(p is fresh.peft.pools[0] for p in fresh.peft.pools)


def test_mismatch_is_rejected(tmp_path):
    path = tmp_path / "ck.npz"
    save_checkpoint(build_model(small_model_config(peft_mode="smoa")), path)
    with pytest.raises(ContractError):
        load_checkpoint(build_model(small_model_config(peft_mode="adapter-serial")), path)
    with pytest.raises(ContractError):
        load_checkpoint(build_model(small_model_config(peft_mode="smoa", n_classes=4)), path)
