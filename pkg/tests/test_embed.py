"""Token normalization, skip-gram training, sentence vectors, the
reduction autoencoder, and tri-gram hashing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sessiongad.embed import (
    EmbedError,
    EmbeddingModel,
    ReductionAutoencoder,
    SessionEmbedder,
    TokenCorpus,
    fnv1a_64,
    load_embedder,
    normalize_tokens,
    reconstruct,
    reduce,
    save_embedder,
    sentence_vector,
    train_reduction,
    train_skipgram,
    trigram_featurize,
)
from sessiongad.nn import Dense, DenseNetwork


class TestNormalizeTokens:
    def test_ip_literal(self):
        assert normalize_tokens("ping 10.1.2.3") == ["ping", "[ip]"]

    def test_flag_split(self):
        assert normalize_tokens("whoami /user") == ["whoami", "user"]

    def test_empty(self):
        assert normalize_tokens("") == []

    def test_numbers_and_hashes(self):
        assert normalize_tokens("sleep 5000") == ["sleep", "[num]"]
        assert normalize_tokens("drop deadbeefdeadbeef1234") == \
            ["drop", "[hash]"]

    def test_drive_path_to_basename(self):
        toks = normalize_tokens(r'start C:\Users\bob\evil.exe now')
        assert toks == ["start", "evil", "exe", "now"]

    def test_case_folding(self):
        assert normalize_tokens("NET USER") == ["net", "user"]


def planted_corpus(n_sentences=1000, seed=0):
    """Tokens a and b always co-occur; c tokens are uniform noise.

    The pair sits at opposite sentence ends, outside each other's training
    window, so their similarity comes purely from the shared noise
    contexts (direct pair updates would instead drive the input vectors
    antipodal, since each token predicts the other but never itself).
    """
    rng = np.random.default_rng(seed)
    noise = [f"c{i}" for i in range(20)]
    sentences = []
    for _ in range(n_sentences):
        filler = [noise[rng.integers(len(noise))] for _ in range(5)]
        sentences.append(["a"] + filler + ["b"])
    return TokenCorpus.build(sentences)


def cosine(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


class TestSkipgram:
    def test_planted_cooccurrence_margin(self):
        margins = []
        for seed in range(5):
            corpus = planted_corpus(seed=seed)
            model = train_skipgram(corpus, dimension=16, window=2,
                                   negatives=5, epochs=4, seed=seed)
            vec = {t: model.input_vectors[i]
                   for t, i in model.vocabulary.items()}
            cos_ab = cosine(vec["a"], vec["b"])
            cos_ac = np.mean([cosine(vec["a"], vec[f"c{i}"])
                              for i in range(20)])
            margins.append(cos_ab - cos_ac)
        # measured mean is ~+1.67 with minimum seed ~+1.66
        assert float(np.mean(margins)) > 0.2

    def test_single_token_corpus_trains(self):
        corpus = TokenCorpus.build([["solo"]])
        model = train_skipgram(corpus, dimension=4, window=2, negatives=2,
                               epochs=2, seed=0)
        assert np.isfinite(model.input_vectors).all()

    def test_fixed_seed_bit_identical(self):
        corpus = planted_corpus(n_sentences=50)
        a = train_skipgram(corpus, 8, 2, 3, epochs=2, seed=9)
        b = train_skipgram(corpus, 8, 2, 3, epochs=2, seed=9)
        np.testing.assert_array_equal(a.input_vectors, b.input_vectors)
        np.testing.assert_array_equal(a.output_vectors, b.output_vectors)

    def test_loss_improves_on_repetitive_corpus(self):
        corpus = planted_corpus(n_sentences=300)
        model = train_skipgram(corpus, 8, 2, 3, epochs=4, seed=1)
        assert model.epoch_losses[-1] < model.epoch_losses[0]

    def test_empty_corpus_rejected(self):
        with pytest.raises(EmbedError):
            train_skipgram(TokenCorpus.build([]), 8, 2, 2)


class TestSentenceVector:
    def _model(self):
        corpus = TokenCorpus.build([["x", "y", "z"]])
        return train_skipgram(corpus, 4, 2, 2, epochs=1, seed=0)

    def test_repeated_token_is_its_vector(self):
        model = self._model()
        out = sentence_vector(model, ["x", "x", "x"])
        np.testing.assert_array_equal(
            out, model.input_vectors[model.vocabulary["x"]])

    def test_out_of_vocabulary_gives_zeros(self):
        model = self._model()
        np.testing.assert_array_equal(sentence_vector(model, ["nope"]),
                                      np.zeros(4))

    def test_two_tokens_mean(self):
        model = self._model()
        out = sentence_vector(model, ["x", "y"])
        vx = model.input_vectors[model.vocabulary["x"]]
        vy = model.input_vectors[model.vocabulary["y"]]
        np.testing.assert_allclose(out, (vx + vy) / 2.0, atol=1e-15)

    def test_permutation_invariance(self):
        model = self._model()
        a = sentence_vector(model, ["x", "y", "z"])
        b = sentence_vector(model, ["z", "x", "y"])
        np.testing.assert_array_equal(a, b)


class TestReduction:
    def test_identity_network_passthrough(self):
        eye = [Dense(np.eye(3), np.zeros(3), "linear") for _ in range(3)]
        ae = ReductionAutoencoder(DenseNetwork(eye))
        x = np.array([0.3, -1.2, 4.0])
        np.testing.assert_array_equal(reduce(ae, x), x)

    def test_zero_input_propagates_bias(self):
        layers = [Dense(np.zeros((3, 3)), np.full(3, 0.5), "linear"),
                  Dense(np.eye(3), np.zeros(3), "linear"),
                  Dense(np.eye(3), np.ones(3), "linear")]
        ae = ReductionAutoencoder(DenseNetwork(layers))
        np.testing.assert_array_equal(reduce(ae, np.zeros(3)),
                                      np.full(3, 0.5))

    def test_training_reduces_reconstruction_error(self):
        v = np.linspace(0.1, 0.9, 6)
        data = np.tile(v, (8, 1))
        ae0 = train_reduction(data, (6, 4, 2), epochs=0, seed=3)
        err0 = float(((reconstruct(ae0, v) - v) ** 2).mean())
        ae = train_reduction(data, (6, 4, 2), epochs=200, seed=3)
        err = float(((reconstruct(ae, v) - v) ** 2).mean())
        assert err < err0

    def test_fixed_seed_deterministic(self):
        rng = np.random.default_rng(4)
        data = rng.random((10, 5))
        a = train_reduction(data, (5, 4, 3), epochs=5, seed=7)
        b = train_reduction(data, (5, 4, 3), epochs=5, seed=7)
        for pa, pb in zip(a.network.params(), b.network.params()):
            np.testing.assert_array_equal(pa, pb)

    def test_empty_input_rejected(self):
        with pytest.raises(EmbedError):
            train_reduction(np.empty((0, 4)), (4, 3, 2))

    def test_width_mismatch_rejected(self):
        rng = np.random.default_rng(5)
        ae = train_reduction(rng.random((4, 5)), (5, 4, 3), epochs=1)
        with pytest.raises(EmbedError):
            reduce(ae, np.zeros(6))


class TestTrigram:
    def test_single_trigram_unit_entry(self):
        vec = trigram_featurize(["abc"], buckets=8)
        assert np.count_nonzero(vec) == 1
        assert vec.max() == pytest.approx(1.0)

    def test_empty_input_zero_vector(self):
        np.testing.assert_array_equal(trigram_featurize([], 8), np.zeros(8))

    def test_l2_norm_one(self):
        vec = trigram_featurize(["abcd"], buckets=16)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)

    def test_fnv_reference_values(self):
        # published FNV-1a 64 test vectors
        assert fnv1a_64(b"") == 0xCBF29CE484222325
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C

    @given(st.lists(st.text(alphabet="abcdefgh /\\.", max_size=12),
                    max_size=5), st.integers(1, 64))
    @settings(max_examples=60, deadline=None)
    def test_norm_is_zero_or_one(self, strings, buckets):
        norm = np.linalg.norm(trigram_featurize(strings, buckets))
        assert norm == pytest.approx(0.0, abs=1e-12) or \
            norm == pytest.approx(1.0, abs=1e-12)


class TestEmbedderContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        corpus = planted_corpus(n_sentences=30)
        cmd = train_skipgram(corpus, 8, 2, 2, epochs=1, seed=0,
                             signature_tag="sig a")
        beh = train_skipgram(corpus, 4, 2, 2, epochs=1, seed=1)
        rng = np.random.default_rng(2)
        ae = train_reduction(rng.random((6, 16)), (16, 8, 8), epochs=2)
        emb = SessionEmbedder(command_models={"sig a": cmd},
                              behavior_model=beh, reduction=ae,
                              signature_order=["sig a"], command_dim=8)
        path = tmp_path / "embed_models.bin"
        save_embedder(emb, path)
        loaded = load_embedder(path)
        np.testing.assert_array_equal(
            loaded.command_models["sig a"].input_vectors, cmd.input_vectors)
        np.testing.assert_array_equal(
            loaded.behavior_model.output_vectors, beh.output_vectors)
        for la, lb in zip(loaded.reduction.network.layers,
                          ae.network.layers):
            np.testing.assert_array_equal(la.w, lb.w)
            np.testing.assert_array_equal(la.b, lb.b)
        assert loaded.signature_order == ["sig a"]
        assert loaded.command_models["sig a"].vocabulary == cmd.vocabulary
