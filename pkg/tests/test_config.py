import pytest
from hypothesis import given
from hypothesis import strategies as st

from adapterx.config import ExperimentConfig, ModelConfig, load_config, parse_config
from adapterx.errors import ConfigError


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = load_config(path)
    assert cfg == ExperimentConfig()
    m = cfg.model
    assert (m.d_model, m.depth, m.attn_heads, m.n_patches, m.patch_dim) == (48, 4, 4, 16, 12)
    assert (m.moa_heads, m.n_experts, m.d_e, m.alpha) == (3, 4, m.rank, 0.01)


def test_alpha_default():
    assert parse_config("[model]\nrank = 16\n").model.alpha == 0.01


def test_d_e_follows_rank_unless_set():
    assert parse_config("[model]\nrank = 6\n").model.d_e == 6
    assert parse_config("[model]\nrank = 6\nd_e = 3\n").model.d_e == 3


def test_init_std_scale_rule():
    assert ModelConfig().init_std == pytest.approx(0.08)
    assert ModelConfig(d_model=768).init_std == pytest.approx(0.02)
    assert ModelConfig(init_std=0.05).init_std == 0.05


@pytest.mark.parametrize(
    "text, field",
    [
        ("[model]\nmoa_heads = 5\n", "moa_heads"),
        ("[model]\nattn_heads = 5\n", "attn_heads"),
        ("[model]\nwidth = 3\n", "model.width"),
        ("[model]\nrank = eight\n", "model.rank"),
        ("[model]\nrank = 48\n", "rank"),
        ("[model]\nalpha = -1\n", "alpha"),
        ("[model]\npeft_mode = lora\n", "peft_mode"),
        ("[model]\ninsertion = sideways\n", "insertion"),
        ("[optim]\nlr = 1\n", "optim"),
        ("rank = 3\n", "<file>"),
        ("[train]\nlr = 0\n", "lr"),
        ("[train]\nschedule = step\n", "schedule"),
        ("[task]\nnoise = -1\n", "noise"),
    ],
)
def test_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == field
    assert str(exc.value).startswith(field)


def test_moa_heads_message():
    with pytest.raises(ConfigError, match="not divisible by 5"):
        parse_config("[model]\nmoa_heads = 5\n")


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("SMOA_SEED", "42")
    assert parse_config("[model]\nseed = 3\n").model.seed == 42
    monkeypatch.setenv("SMOA_SEED", "x")
    with pytest.raises(ConfigError, match="SMOA_SEED"):
        parse_config("")


def test_bool_parsing():
    cfg = parse_config("[model]\ntop1_routing = yes\ndetach_embedding_norm = 0\n")
    assert cfg.model.top1_routing is True and cfg.model.detach_embedding_norm is False
    with pytest.raises(ConfigError):
        parse_config("[model]\ntop1_routing = maybe\n")


def test_hash_is_stable_and_sensitive():
    a, b = ExperimentConfig(), ExperimentConfig()
    assert a.hash() == b.hash() and len(a.hash()) == 16
    b.train.lr = 2e-3
    assert a.hash() != b.hash()


@given(st.sampled_from([1, 2, 3, 4, 6, 8, 12, 16, 24, 48]), st.sampled_from([1, 2, 3, 4, 6, 8]))
def test_divisibility_invariant(moa_heads, attn_heads):
    cfg = ModelConfig(moa_heads=moa_heads, attn_heads=attn_heads)
    cfg.validate()
    assert cfg.d_model % moa_heads == 0 and cfg.d_model % attn_heads == 0
