import pytest

from diffqkv.config import (
    AttentionConfig,
    AttentionMode,
    ModelConfig,
    PRESETS,
    attention_mode,
    format_config_text,
    parse_config_text,
    resolve_config,
    toy_preset,
    validate_config,
    validate_model_config,
)
from diffqkv.errors import ConfigFileError, DimensionError, DivisibilityError


def attn(n_q, n_k, n_v, **kw):
    return AttentionConfig(n_q_heads=n_q, n_k_heads=n_k, n_v_heads=n_v, d_head=kw.pop("d_head", 64), **kw)


class TestValidate:
    def test_sigma_preset_values(self):
        model = PRESETS["sigma-1.5b"]
        cfg = model.attention
        assert (cfg.n_q_heads, cfg.n_k_heads, cfg.n_v_heads) == (32, 4, 16)
        assert cfg.d_head == cfg.d_k_head == 64
        assert cfg.aug_q_dim == 3072
        assert cfg.rope_theta == 50_000.0
        assert (model.n_layers, model.d_model, model.d_ffn) == (26, 2048, 6144)
        assert model.vocab_size == 128_256
        assert validate_config(cfg, model) is cfg

    def test_non_divisible_k_heads(self):
        with pytest.raises(DivisibilityError):
            validate_config(attn(32, 5, 16))

    def test_non_divisible_v_heads(self):
        with pytest.raises(DivisibilityError):
            validate_config(attn(32, 4, 3))

    def test_mha_degenerate_valid(self):
        cfg = attn(32, 32, 32)
        model = ModelConfig(cfg, n_layers=2, d_model=2048, d_ffn=128, vocab_size=10, max_seq_len=8)
        assert validate_config(cfg, model) is cfg

    def test_k_dim_larger_than_head_dim(self):
        with pytest.raises(DimensionError):
            validate_config(attn(8, 2, 4, d_head=4, d_k_head=8))

    def test_head_times_dim_must_match_d_model(self):
        cfg = attn(8, 2, 4, d_head=4)
        model = ModelConfig(cfg, n_layers=1, d_model=64, d_ffn=16, vocab_size=10, max_seq_len=8)
        with pytest.raises(DimensionError):
            validate_config(cfg, model)

    @pytest.mark.parametrize("field,value", [
        ("n_q_heads", 0), ("n_k_heads", -1), ("d_head", 0), ("aug_q_dim", -1),
    ])
    def test_non_positive_fields(self, field, value):
        kwargs = dict(n_q_heads=8, n_k_heads=2, n_v_heads=4, d_head=4)
        kwargs[field] = value
        with pytest.raises(ValueError):
            validate_config(AttentionConfig(**kwargs))

    def test_idempotent(self):
        cfg = validate_config(attn(8, 2, 4, d_head=4))
        assert validate_config(cfg) == cfg

    def test_all_presets_validate(self):
        for name, model in PRESETS.items():
            assert validate_model_config(model) is model, name

    def test_toy_presets_validate(self):
        for name in PRESETS:
            validate_model_config(toy_preset(name))
            validate_model_config(toy_preset(name, half_k=True))

    def test_defaults_fill_in(self):
        cfg = attn(8, 2, 4, d_head=6)
        assert cfg.d_k_head == 6
        assert cfg.softmax_scale_dim == 6


class TestAttentionMode:
    @pytest.mark.parametrize("heads,mode", [
        ((32, 32, 32), AttentionMode.MHA),
        ((32, 1, 1), AttentionMode.MQA),
        ((32, 16, 16), AttentionMode.GQA),
        ((32, 4, 16), AttentionMode.DIFF_QKV),
        ((1, 1, 1), AttentionMode.MHA),
        ((32, 4, 4), AttentionMode.GQA),
        ((32, 16, 4), AttentionMode.DIFF_QKV),
        ((8, 8, 4), AttentionMode.DIFF_QKV),
    ])
    def test_classification(self, heads, mode):
        assert attention_mode(validate_config(attn(*heads))) is mode

    def test_partition(self):
        # every valid head combination lands in exactly one mode
        for n_q in (1, 2, 8, 32):
            for n_k in (1, 2, 8, 32):
                for n_v in (1, 2, 8, 32):
                    if n_q % n_k or n_q % n_v:
                        continue
                    assert attention_mode(validate_config(attn(n_q, n_k, n_v))) in AttentionMode


class TestConfigFiles:
    def test_round_trip_model(self):
        model = PRESETS["sigma-1.5b"]
        assert parse_config_text(format_config_text(model)) == model

    def test_round_trip_attention_only(self):
        cfg = attn(8, 2, 4, d_head=4, aug_q_dim=48)
        assert parse_config_text(format_config_text(cfg)) == cfg

    def test_comments_and_blank_lines(self):
        text = """
        # a comment
        attention.n_q_heads = 8   # trailing comment
        attention.n_k_heads = 2
        attention.n_v_heads = 4
        attention.d_head = 4
        """
        cfg = parse_config_text(text)
        assert cfg.n_q_heads == 8 and cfg.d_k_head == 4

    def test_unknown_key(self):
        with pytest.raises(ConfigFileError, match="unknown key"):
            parse_config_text("attention.n_heads = 8")

    def test_missing_required_key(self):
        with pytest.raises(ConfigFileError, match="missing"):
            parse_config_text("attention.n_q_heads = 8")

    def test_partial_model_block(self):
        base = format_config_text(attn(8, 2, 4, d_head=4))
        with pytest.raises(ConfigFileError, match="missing"):
            parse_config_text(base + "model.d_model = 32\n")

    def test_malformed_line(self):
        with pytest.raises(ConfigFileError, match="key = value"):
            parse_config_text("attention.n_q_heads 8")

    def test_non_integer_value(self):
        with pytest.raises(ConfigFileError, match="integer"):
            parse_config_text("attention.n_q_heads = eight")

    def test_resolve_preset_and_file(self, tmp_path):
        assert resolve_config("gqa-16") == PRESETS["gqa-16"]
        path = tmp_path / "toy.cfg"
        path.write_text(format_config_text(toy_preset("sigma-1.5b")))
        assert resolve_config(str(path)) == toy_preset("sigma-1.5b")
        with pytest.raises(ConfigFileError):
            resolve_config("no-such-thing")
