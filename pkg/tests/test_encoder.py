"""Encoder init, forward contract, padding invariance, determinism."""

import numpy as np
import pytest

from sembench.contrastive import cosine_sim
from sembench.corpus import build_vocab, generate_synthetic_corpus, pack_batch, prepare_corpus, sample_batch
from sembench.encoder import EncoderConfig, encode, init_model, param_names
from sembench.errors import ConfigError, InputError
from sembench.pooling import parse_method, pool


def tiny_config(**overrides):
    base = dict(vocab_size=128, hidden_dim=16, n_layers=2, n_heads=2,
                ffn_dim=32, max_seq_len=16, dropout_rate=0.1)
    base.update(overrides)
    return EncoderConfig(**base)


def closed_form_param_count(c: EncoderConfig) -> int:
    """Independent hand count: embeddings + per-layer attention/FFN/LN."""
    h, f = c.hidden_dim, c.ffn_dim
    embeddings = c.vocab_size * h + c.max_seq_len * h
    attention = 4 * (h * h + h)
    ffn = (h * f + f) + (f * h + h)
    norms = 2 * (h + h)
    return embeddings + c.n_layers * (attention + ffn + norms)


def make_batch(config, sizes, seed=0):
    rng = np.random.default_rng(seed)
    from sembench.corpus import TokenizedSentence

    sents = [TokenizedSentence([1] + list(rng.integers(3, config.vocab_size, size=n)))
             for n in sizes]
    return pack_batch(sents)


class TestInitModel:
    def test_param_count_matches_closed_form(self):
        config = tiny_config()
        model = init_model(config, seed=0)
        assert model.param_count() == closed_form_param_count(config)
        # second shape for good measure
        config2 = tiny_config(vocab_size=64, hidden_dim=8, ffn_dim=16, n_layers=3)
        assert init_model(config2, 0).param_count() == closed_form_param_count(config2)

    def test_same_seed_bit_identical(self):
        a = init_model(tiny_config(), seed=11)
        b = init_model(tiny_config(), seed=11)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_different_seed_differs(self):
        a = init_model(tiny_config(), seed=11)
        b = init_model(tiny_config(), seed=12)
        assert any(not np.array_equal(a.params[n], b.params[n]) for n in a.params)

    def test_divisibility_config_error(self):
        with pytest.raises(ConfigError):
            init_model(tiny_config(hidden_dim=15), seed=0)

    def test_init_statistics(self):
        model = init_model(tiny_config(vocab_size=4096), seed=0)
        w = model.params["tok_emb"]
        assert abs(float(w.std()) - 0.02) < 0.002
        assert np.all(model.params["layers.0.ln1.gain"] == 1.0)
        assert np.all(model.params["layers.0.attn.bq"] == 0.0)

    def test_param_names_unique_and_ordered(self):
        config = tiny_config()
        names = param_names(config)
        assert len(names) == len(set(names))
        assert list(init_model(config, 0).params) == names


class TestEncode:
    def test_output_shapes(self):
        config = tiny_config()
        model = init_model(config, seed=1)
        batch = make_batch(config, [7, 5, 3])  # +1 CLS -> width 8
        stack = encode(model, batch)
        assert len(stack.layers) == config.n_layers + 1
        for layer in stack.layers:
            assert layer.shape == (3, 8, config.hidden_dim)

    def test_inference_deterministic(self):
        config = tiny_config()
        model = init_model(config, seed=1)
        batch = make_batch(config, [6, 6])
        a = encode(model, batch, dropout_seed=1, training=False)
        b = encode(model, batch, dropout_seed=2, training=False)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la, lb)

    def test_training_seeds_give_similar_not_identical_views(self):
        config = tiny_config()
        model = init_model(config, seed=1)
        batch = make_batch(config, [8, 8, 8, 8])
        s1 = encode(model, batch, dropout_seed=100, training=True)
        s2 = encode(model, batch, dropout_seed=200, training=True)
        assert not np.array_equal(s1.layers[-1], s2.layers[-1])
        pooled1 = pool(s1, parse_method("avg-last"))
        pooled2 = pool(s2, parse_method("avg-last"))
        sims = [cosine_sim(a, b) for a, b in zip(pooled1, pooled2)]
        assert all(s > 0.5 for s in sims)

    def test_training_same_seed_identical(self):
        config = tiny_config()
        model = init_model(config, seed=1)
        batch = make_batch(config, [8, 4])
        s1 = encode(model, batch, dropout_seed=7, training=True)
        s2 = encode(model, batch, dropout_seed=7, training=True)
        for la, lb in zip(s1.layers, s2.layers):
            np.testing.assert_array_equal(la, lb)

    def test_id_out_of_range(self):
        config = tiny_config()
        model = init_model(config, seed=1)
        batch = make_batch(config, [4])
        batch.ids[0, 2] = config.vocab_size
        with pytest.raises(InputError):
            encode(model, batch)

    def test_sequence_too_long(self):
        config = tiny_config(max_seq_len=4)
        model = init_model(config, seed=1)
        batch = make_batch(tiny_config(max_seq_len=16), [10])
        with pytest.raises(InputError):
            encode(model, batch)


class TestPaddingInvariance:
    def test_extra_pad_columns_do_not_move_real_states(self):
        """Appending PAD columns leaves non-PAD hidden states unchanged
        within 1e-5 (attention-mask correctness)."""
        config = tiny_config(dropout_rate=0.0)
        model = init_model(config, seed=5)
        batch = make_batch(config, [6, 4])
        stack = encode(model, batch)

        wide = 4
        ids = np.zeros((2, batch.ids.shape[1] + wide), dtype=np.int64)
        ids[:, : batch.ids.shape[1]] = batch.ids
        mask = np.zeros_like(ids, dtype=np.int8)
        mask[:, : batch.mask.shape[1]] = batch.mask
        from sembench.corpus import SentenceBatch

        stack_wide = encode(model, SentenceBatch(ids, mask))
        for layer, layer_wide in zip(stack.layers, stack_wide.layers):
            for row in range(2):
                real = batch.mask[row] == 1
                np.testing.assert_allclose(
                    layer_wide[row, : batch.ids.shape[1]][real],
                    layer[row][real], atol=1e-5)


class TestBatchOrderEquivariance:
    def test_permuting_sentences_permutes_rows(self):
        config = tiny_config(dropout_rate=0.0)
        model = init_model(config, seed=2)
        batch = make_batch(config, [7, 7, 7, 7], seed=3)
        perm = [2, 0, 3, 1]
        from sembench.corpus import SentenceBatch

        permuted = SentenceBatch(batch.ids[perm], batch.mask[perm])
        stack = encode(model, batch)
        stack_p = encode(model, permuted)
        for layer, layer_p in zip(stack.layers, stack_p.layers):
            np.testing.assert_allclose(layer_p, layer[perm], atol=1e-6)


class TestEndToEndSmoke:
    def test_synthetic_corpus_roundtrip(self):
        sentences = generate_synthetic_corpus(16, seed=0)
        vocab = build_vocab(sentences, 1000)
        corpus = prepare_corpus(sentences, vocab, 16)
        batch = sample_batch(corpus, 8, seed=0)
        model = init_model(EncoderConfig(vocab_size=vocab.size, hidden_dim=16,
                                         n_layers=2, n_heads=2, ffn_dim=32,
                                         max_seq_len=16), seed=0)
        stack = encode(model, batch)
        assert all(np.all(np.isfinite(layer)) for layer in stack.layers)
