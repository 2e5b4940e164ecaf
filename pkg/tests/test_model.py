import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from diffqkv.config import AttentionConfig, ModelConfig, toy_preset
from diffqkv.errors import CapacityExceededError, LengthError, TokenRangeError
from diffqkv.model import (
    as_parameter_tensors,
    copy_task_batch,
    decode,
    forward,
    forward_graph,
    forward_incremental,
    init_model,
    load_checkpoint,
    loss_graph,
    make_caches,
    random_token_batch,
    save_checkpoint,
    train_step,
)

from oracles import vanilla_decoder_forward


def toy_cfg(n_q=8, n_k=2, n_v=4, d_k_head=None, aug_q_dim=0, vocab=64, layers=2):
    attn = AttentionConfig(
        n_q_heads=n_q, n_k_heads=n_k, n_v_heads=n_v, d_head=4, d_k_head=d_k_head,
        aug_q_dim=aug_q_dim,
    )
    return ModelConfig(
        attention=attn, n_layers=layers, d_model=n_q * 4, d_ffn=96,
        vocab_size=vocab, max_seq_len=512,
    )


class TestForward:
    def test_logit_shapes(self):
        model = init_model(toy_cfg(), seed=0)
        tokens = np.random.default_rng(0).integers(0, 64, size=(2, 10))
        assert forward(model, tokens).shape == (2, 10, 64)

    def test_causality(self):
        model = init_model(toy_cfg(aug_q_dim=48), seed=1)
        rng = np.random.default_rng(1)
        tokens = rng.integers(0, 64, size=(1, 10))
        base = forward(model, tokens)
        tokens2 = tokens.copy()
        tokens2[0, 9] = (tokens2[0, 9] + 1) % 64
        assert_array_equal(forward(model, tokens2)[:, :9], base[:, :9])

    def test_token_range_error(self):
        model = init_model(toy_cfg(), seed=0)
        with pytest.raises(TokenRangeError):
            forward(model, np.array([[0, 64]]))

    def test_length_error(self):
        model = init_model(toy_cfg(), seed=0)
        with pytest.raises(LengthError):
            forward(model, np.zeros((1, 513), dtype=int))

    def test_mha_degenerate_matches_vanilla_decoder(self):
        cfg = toy_cfg(n_q=8, n_k=8, n_v=8)
        model = init_model(cfg, seed=2)
        tokens = np.random.default_rng(2).integers(0, 64, size=(2, 7))
        assert_allclose(forward(model, tokens), vanilla_decoder_forward(model, tokens), atol=1e-10)

    @pytest.mark.parametrize("kwargs", [
        dict(), dict(aug_q_dim=48), dict(d_k_head=2), dict(n_k=8, n_v=8), dict(n_k=1, n_v=1),
    ])
    def test_graph_forward_matches_numpy_forward(self, kwargs):
        cfg = toy_cfg(**kwargs)
        model = init_model(cfg, seed=3)
        tokens = np.random.default_rng(3).integers(0, 64, size=(2, 6))
        graph_logits = forward_graph(as_parameter_tensors(model), cfg, tokens).data
        assert_allclose(graph_logits, forward(model, tokens), atol=1e-10)


class TestDecode:
    def test_zero_new_tokens_returns_prompt(self):
        model = init_model(toy_cfg(), seed=4)
        prompt = np.array([5, 6, 7])
        assert_array_equal(decode(model, prompt, 0), prompt)

    def test_cache_length_accounting(self):
        model = init_model(toy_cfg(), seed=4)
        caches = make_caches(model, batch=1, capacity=32)
        decode(model, np.array([1, 2, 3, 4, 5]), 7, caches)
        assert all(c.len == 5 + 7 for c in caches)

    def test_capacity_guard(self):
        model = init_model(toy_cfg(), seed=4)
        caches = make_caches(model, batch=1, capacity=8)
        with pytest.raises(CapacityExceededError):
            decode(model, np.array([1, 2, 3, 4, 5]), 7, caches)

    @pytest.mark.parametrize("preset_name,half_k", [
        ("mha-32", False), ("mqa", False), ("gqa-16", False),
        ("sigma-1.5b", False), ("sigma-1.5b", True),
    ])
    def test_incremental_matches_recompute(self, preset_name, half_k):
        cfg = toy_preset(preset_name, half_k=half_k)
        model = init_model(cfg, seed=5)
        rng = np.random.default_rng(5)
        prompt = rng.integers(0, cfg.vocab_size, size=4)
        produced = decode(model, prompt, 12)
        seq = list(prompt)
        for _ in range(12):
            logits = forward(model, np.array([seq]))
            seq.append(int(np.argmax(logits[0, -1])))
        assert produced.tolist() == seq

    def test_prefill_logits_match_full_forward(self):
        cfg = toy_cfg(aug_q_dim=48, d_k_head=2)
        model = init_model(cfg, seed=6)
        tokens = np.random.default_rng(6).integers(0, 64, size=(1, 9))
        caches = make_caches(model, batch=1, capacity=9)
        incremental = forward_incremental(model, tokens, caches, start_pos=0)
        assert_allclose(incremental, forward(model, tokens), atol=1e-10)


class TestTraining:
    def test_initial_loss_near_log_vocab(self):
        cfg = toy_cfg()
        model = init_model(cfg, seed=7)
        batch = random_token_batch(np.random.default_rng(7), 8, 16, cfg.vocab_size)
        loss = float(loss_graph(as_parameter_tensors(model), cfg, batch).data)
        assert abs(loss - math.log(64)) / math.log(64) < 0.05

    def test_zero_lr_is_a_no_op(self):
        cfg = toy_cfg()
        model = init_model(cfg, seed=8)
        before = {k: v.copy() for k, v in model.named_tensors().items()}
        batch = random_token_batch(np.random.default_rng(8), 4, 8, cfg.vocab_size)
        first = train_step(model, batch, lr=0.0)
        for name, arr in model.named_tensors().items():
            assert_array_equal(arr, before[name])
        assert train_step(model, batch, lr=0.0) == first

    def test_loss_decreases_on_copy_task(self):
        cfg = toy_cfg()
        model = init_model(cfg, seed=42)
        rng = np.random.default_rng(42)
        losses = [
            train_step(model, copy_task_batch(rng, 16, 32, cfg.vocab_size), lr=0.2)
            for _ in range(60)
        ]
        assert losses[-1] < 0.8 * losses[0]

    def test_training_stays_finite_for_1000_steps(self):
        cfg = toy_cfg(aug_q_dim=48)
        model = init_model(cfg, seed=9)
        rng = np.random.default_rng(9)
        for _ in range(1000):
            loss = train_step(model, random_token_batch(rng, 4, 12, cfg.vocab_size), lr=1e-2)
            assert np.isfinite(loss)
        for arr in model.named_tensors().values():
            assert np.isfinite(arr).all()

    def test_copy_task_structure(self):
        batch = copy_task_batch(np.random.default_rng(10), 5, 9, 64)
        assert batch.shape == (5, 9)
        assert_array_equal(batch[:, 2:], batch[:, :-2])  # next token == previous token


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        cfg = toy_cfg(aug_q_dim=48, d_k_head=2)
        model = init_model(cfg, seed=11)
        rng = np.random.default_rng(11)
        train_step(model, random_token_batch(rng, 2, 8, cfg.vocab_size), lr=0.1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.config == cfg
        tokens = rng.integers(0, cfg.vocab_size, size=(1, 6))
        assert_array_equal(forward(loaded, tokens), forward(model, tokens))
