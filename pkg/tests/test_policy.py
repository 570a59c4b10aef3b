"""Policy network: initialization, encoders, the action distribution and
checkpoint serialization."""

import math

import numpy as np
import pytest

from lexsum import autodiff as ad
from lexsum.corpus import Corpus, Document, Sentence, Vocab, build_vocab
from lexsum.policy import (
    Action,
    ActionDistribution,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    ExtractionState,
    NumericsError,
    PolicyConfig,
    PolicyNetwork,
    init_params,
    load_checkpoint,
    log_prob,
    param_spec,
    sample_action,
    save_checkpoint,
)
from lexsum.synthetic import make_marker_corpus

CFG = dict(embed_dim=8, hidden_dim=8, attention_heads=2, max_sentences=50,
           max_tokens_per_sentence=12)


@pytest.fixture(scope="module")
def setup():
    corpus = make_marker_corpus(6, n_sentences=8, n_markers=2, seed=3)
    vocab = build_vocab(corpus)
    config = PolicyConfig(vocab_size=len(vocab), **CFG)
    params = init_params(config, seed=0)
    return corpus, vocab, config, PolicyNetwork(config, vocab, params)


def doc_from_texts(texts, doc_id="d"):
    return Document(id=doc_id, sentences=tuple(Sentence.from_raw(t) for t in texts))


class TestConfig:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ValueError):
            PolicyConfig(vocab_size=10, hidden_dim=10, attention_heads=4)

    def test_positive_dims_enforced(self):
        with pytest.raises(ValueError):
            PolicyConfig(vocab_size=0)


class TestInitParams:
    def test_deterministic_given_seed(self, setup):
        _, _, config, _ = setup
        a = init_params(config, seed=5)
        b = init_params(config, seed=5)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_different_seeds_differ(self, setup):
        _, _, config, _ = setup
        a = init_params(config, seed=5)
        b = init_params(config, seed=6)
        assert any(
            not np.array_equal(a.tensors[n], b.tensors[n]) for n in a.tensors
        )

    def test_forget_gate_bias_slice_is_one(self, setup):
        _, _, config, _ = setup
        params = init_params(config, seed=0)
        d_l = config.hidden_dim // 2
        for name in ("local_fwd_b", "local_bwd_b", "global_fwd_b", "global_bwd_b"):
            b = params.tensors[name]
            np.testing.assert_array_equal(b[d_l : 2 * d_l], 1.0)
            np.testing.assert_array_equal(b[:d_l], 0.0)
            np.testing.assert_array_equal(b[2 * d_l :], 0.0)

    def test_other_biases_zero_and_bounds(self, setup):
        _, _, config, _ = setup
        params = init_params(config, seed=1)
        np.testing.assert_array_equal(params.tensors["extract_b1"], 0.0)
        np.testing.assert_array_equal(params.tensors["mhp_out_b"], 0.0)
        np.testing.assert_array_equal(params.tensors["hist0_ln_gamma"], 1.0)
        for name, shape in param_spec(config).items():
            arr = params.tensors[name]
            assert arr.shape == shape
            if len(shape) == 2 and name != "history_null":
                assert np.abs(arr).max() <= 1.0 / math.sqrt(shape[0]) + 1e-6

    def test_default_dtype_float32(self, setup):
        _, _, config, _ = setup
        assert init_params(config, 0).dtype == np.float32


class TestEncodeLocal:
    def test_shared_sentence_text_gives_identical_rows(self, setup):
        _, _, _, net = setup
        a = doc_from_texts(["w000 w001", "key00 key01", "w002"], "a")
        b = doc_from_texts(["w005", "w006 w007", "w000 w001"], "b")
        ra = net.encode_local(a).data
        rb = net.encode_local(b).data
        np.testing.assert_array_equal(ra[0], rb[2])

    def test_permutation_equivariance_exact(self, setup):
        corpus, _, _, net = setup
        doc = corpus[0]
        perm = np.random.default_rng(0).permutation(len(doc.sentences))
        permuted = Document(
            id="p", sentences=tuple(doc.sentences[i] for i in perm),
            gold_summary=doc.gold_summary,
        )
        base = net.encode_local(doc).data
        swapped = net.encode_local(permuted).data
        np.testing.assert_array_equal(swapped, base[perm])

    def test_all_unknown_tokens_finite(self, setup):
        _, _, _, net = setup
        doc = doc_from_texts(["zzz qqq vvv", "mmm nnn"])
        out = net.encode_local(doc).data
        assert np.isfinite(out).all()

    def test_empty_ish_sentence_finite(self, setup):
        _, _, _, net = setup
        doc = doc_from_texts(["...", "w000 w001"])
        assert doc.sentences[0].tokens == ()
        out = net.encode_local(doc).data
        assert out.shape[0] == 2 and np.isfinite(out).all()

    def test_truncates_to_max_tokens(self, setup):
        _, _, config, net = setup
        long = " ".join(["w000"] * (config.max_tokens_per_sentence + 30))
        out = net.encode_local(doc_from_texts([long])).data
        assert np.isfinite(out).all()


class TestEncodeGlobal:
    def test_single_sentence(self, setup):
        _, _, _, net = setup
        local = net.encode_local(doc_from_texts(["w000 w001"]))
        out = net.encode_global(local).data
        assert out.shape == (1, net.config.hidden_dim)
        assert np.isfinite(out).all()

    def test_bidirectional_dependence(self, setup):
        _, _, _, net = setup
        rng = np.random.default_rng(1)
        base = ad.Tensor(rng.normal(size=(5, net.config.hidden_dim)).astype(np.float64))
        perturbed = ad.Tensor(base.data.copy())
        perturbed.data[4] += 1.0  # change the last row only
        params64 = net.params.astype(np.float64)
        net64 = PolicyNetwork(net.config, net.vocab, params64)
        a = net64.encode_global(base).data
        b = net64.encode_global(perturbed).data
        assert not np.array_equal(a[0], b[0])  # row 0 sees the change at row 4

    def test_zero_input_bias_driven(self, setup):
        _, _, _, net = setup
        zeros = ad.Tensor(np.zeros((3, net.config.hidden_dim), dtype=np.float32))
        a = net.encode_global(zeros).data
        b = net.encode_global(zeros).data
        np.testing.assert_array_equal(a, b)
        assert np.isfinite(a).all()


class TestEncodeHistory:
    def test_step_zero_uses_null_context(self, setup):
        _, vocab, config, net = setup
        doc = doc_from_texts(["w000 w001", "w002", "key00"])
        local = net.encode_local(doc)
        base = net.encode_history(local, ()).data
        assert np.isfinite(base).all()
        # the learned null vector is the whole context at t=0 and nothing else
        bumped = net.params.copy()
        bumped.tensors["history_null"][:] += 0.5
        net2 = PolicyNetwork(config, vocab, bumped)
        local2 = net2.encode_local(doc)
        np.testing.assert_array_equal(local2.data, local.data)
        assert not np.array_equal(net2.encode_history(local2, ()).data, base)
        np.testing.assert_array_equal(
            net2.encode_history(local2, (1,)).data,
            net.encode_history(local, (1,)).data,
        )

    def test_extraction_changes_remaining_rows(self, setup):
        _, _, _, net = setup
        doc = doc_from_texts(["w000 w001", "w002 w003", "key00 key01"])
        local = net.encode_local(doc)
        before = net.encode_history(local, ()).data
        after = net.encode_history(local, (1,)).data
        assert not np.array_equal(before[0], after[0])
        assert not np.array_equal(before[2], after[2])


def uniform_score_network(setup_tuple):
    """Zero the extractor head so every sentence scores identically."""
    _, vocab, config, net = setup_tuple
    params = net.params.copy()
    params.tensors["extract_w2"][:] = 0.0
    params.tensors["extract_b2"][:] = 0.0
    return PolicyNetwork(config, vocab, params)


class TestActionDistribution:
    def test_equal_scores_give_uniform_probs(self, setup):
        net = uniform_score_network(setup)
        doc = doc_from_texts(["w000", "w001 w002", "key00"])
        state = ExtractionState.initial(doc, net.config.max_sentences)
        dist = net.action_distribution(state)
        np.testing.assert_allclose(dist.sentence_probs, 1.0 / 3.0, atol=1e-7)
        assert dist.stop_prob == pytest.approx(0.5, abs=1e-6)

    def test_normalization_over_random_states(self, setup):
        corpus, _, _, net = setup
        rng = np.random.default_rng(0)
        checked = 0
        for doc in corpus:
            cache = net.encode_document(doc)
            for _ in range(170):
                n = len(doc.sentences)
                k = int(rng.integers(0, n))
                extracted = tuple(rng.choice(n, size=k, replace=False).tolist())
                remaining = tuple(i for i in range(n) if i not in extracted)
                state = ExtractionState(doc, extracted, remaining)
                dist = net.action_distribution(state, cache)
                assert abs(dist.sentence_probs.sum() - 1.0) <= 1e-6
                assert ((dist.sentence_probs >= 0) & (dist.sentence_probs <= 1)).all()
                assert 0.0 <= dist.stop_prob <= 1.0
                checked += 1
        assert checked >= 1000

    def test_joint_action_space_sums_to_one(self, setup):
        corpus, _, _, net = setup
        doc = corpus[1]
        state = ExtractionState.initial(doc, net.config.max_sentences)
        dist = net.action_distribution(state)
        m = len(dist.remaining)
        total = sum(
            dist.prob_of(Action(stop=True, sentence_index=None)) for _ in range(m)
        ) + sum(
            dist.prob_of(Action(stop=False, sentence_index=i))
            for i in dist.remaining
        )
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_empty_remaining_rejected(self, setup):
        corpus, _, _, net = setup
        doc = corpus[0]
        n = len(doc.sentences)
        state = ExtractionState(doc, tuple(range(n)), ())
        with pytest.raises(ValueError, match="terminated"):
            net.action_distribution(state)

    def test_monotone_score_effect(self):
        # ratio form: raising one weight raises its share and lowers the rest
        u = np.array([0.3, 0.5, 0.2])
        base = u / u.sum()
        bumped = u.copy()
        bumped[0] += 0.1
        after = bumped / bumped.sum()
        assert after[0] > base[0]
        assert (after[1:] < base[1:]).all()

    def test_scaling_invariance(self):
        u = np.array([0.25, 0.5, 0.125])
        probs = u / u.sum()
        scaled = (7.5 * u) / (7.5 * u).sum()
        np.testing.assert_allclose(scaled, probs, atol=1e-12)


class TestLogProbAndSampling:
    def dist(self, stop, probs, remaining=None):
        probs = np.asarray(probs, dtype=np.float64)
        remaining = tuple(range(len(probs))) if remaining is None else remaining
        return ActionDistribution(stop, remaining, probs)

    def test_select_fixture_ln_point_four(self):
        # u = (0.5, 0.5) normalizes to (0.5, 0.5); with p_stop 0.2 the joint
        # probability of selecting sentence 0 is 0.8 * 0.5 = 0.4
        d = self.dist(0.2, [0.5, 0.5])
        assert log_prob(d, Action(stop=False, sentence_index=0)) == pytest.approx(
            math.log(0.4), abs=1e-12
        )

    def test_stop_fixture_ln_quarter(self):
        d = self.dist(0.5, [0.7, 0.3])
        assert log_prob(d, Action(stop=True)) == pytest.approx(
            math.log(0.25), abs=1e-12
        )

    def test_log_prob_never_positive(self, setup):
        corpus, _, _, net = setup
        rng = np.random.default_rng(2)
        for doc in corpus[:3]:
            state = ExtractionState.initial(doc, net.config.max_sentences)
            dist = net.action_distribution(state)
            for _ in range(50):
                action = sample_action(dist, rng)
                assert log_prob(dist, action) <= 0.0

    def test_zero_probability_is_error(self):
        d = self.dist(0.0, [1.0, 0.0])
        with pytest.raises(NumericsError):
            log_prob(d, Action(stop=True))

    def test_forced_stop(self):
        rng = np.random.default_rng(0)
        d = self.dist(1.0, [1.0])
        assert all(sample_action(d, rng).stop for _ in range(100))

    def test_forced_selection(self):
        rng = np.random.default_rng(0)
        d = self.dist(0.0, [1.0], remaining=(4,))
        a = sample_action(d, rng)
        assert not a.stop and a.sentence_index == 4

    def test_empirical_frequencies_within_3_sigma(self):
        rng = np.random.default_rng(123)
        p_stop = 0.3
        probs = np.array([0.5, 0.3, 0.2])
        d = self.dist(p_stop, probs)
        n = 100_000
        stops = 0
        picks = np.zeros(3)
        for _ in range(n):
            a = sample_action(d, rng)
            if a.stop:
                stops += 1
            else:
                picks[a.sentence_index] += 1
        sigma_stop = math.sqrt(p_stop * (1 - p_stop) / n)
        assert abs(stops / n - p_stop) < 3 * sigma_stop
        for j in range(3):
            pj = (1 - p_stop) * probs[j]
            sigma = math.sqrt(pj * (1 - pj) / n)
            assert abs(picks[j] / n - pj) < 3 * sigma


class TestExtractionState:
    def test_partition_invariant(self, setup):
        corpus, _, _, net = setup
        doc = corpus[0]
        state = ExtractionState.initial(doc, net.config.max_sentences)
        n = len(doc.sentences)
        state = state.advance(3).advance(0)
        assert set(state.extracted) | set(state.remaining) == set(range(n))
        assert not set(state.extracted) & set(state.remaining)
        assert state.t == 2

    def test_double_selection_rejected(self, setup):
        corpus, _, _, net = setup
        state = ExtractionState.initial(corpus[0], 50).advance(1)
        with pytest.raises(ValueError):
            state.advance(1)

    def test_action_requires_index(self):
        with pytest.raises(ValueError):
            Action(stop=False)


class TestCheckpoint:
    def test_round_trip_bit_exact_and_same_forward(self, setup, tmp_path):
        corpus, vocab, config, net = setup
        path = tmp_path / "model.lexsum"
        save_checkpoint(net.params, config, vocab, path)
        params, config2, vocab2 = load_checkpoint(path)
        assert config2 == config
        assert vocab2.id_to_token == vocab.id_to_token
        for name in net.params.tensors:
            np.testing.assert_array_equal(params.tensors[name], net.params.tensors[name])
        net2 = PolicyNetwork(config2, vocab2, params)
        doc = corpus[0]
        state = ExtractionState.initial(doc, config.max_sentences)
        d1 = net.action_distribution(state)
        d2 = net2.action_distribution(state)
        assert d1.stop_prob == d2.stop_prob
        np.testing.assert_array_equal(d1.sentence_probs, d2.sentence_probs)

    def test_save_is_deterministic(self, setup, tmp_path):
        _, vocab, config, net = setup
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(net.params, config, vocab, a)
        save_checkpoint(net.params, config, vocab, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, setup, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTLEX\x01" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch(self, setup, tmp_path):
        _, vocab, config, net = setup
        path = tmp_path / "model.bin"
        save_checkpoint(net.params, config, vocab, path)
        raw = bytearray(path.read_bytes())
        text = raw.decode("latin1")
        fixed = text.replace('"version":1', '"version":9', 1)
        path.write_bytes(fixed.encode("latin1"))
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(path)

    def test_truncated_payload(self, setup, tmp_path):
        _, vocab, config, net = setup
        path = tmp_path / "model.bin"
        save_checkpoint(net.params, config, vocab, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CheckpointTruncatedError, match="truncated"):
            load_checkpoint(path)

    def test_config_mismatch_on_load_into(self, setup, tmp_path):
        _, vocab, config, net = setup
        path = tmp_path / "model.bin"
        save_checkpoint(net.params, config, vocab, path)
        other = PolicyConfig(vocab_size=config.vocab_size, embed_dim=16,
                             hidden_dim=8, attention_heads=2)
        with pytest.raises(CheckpointShapeError, match="shape"):
            load_checkpoint(path, expected_config=other)


class TestAdversarialForward:
    def test_extremes_stay_finite(self, setup):
        _, _, _, net = setup
        cases = [
            doc_from_texts(["w000"]),  # N = 1, single token
            doc_from_texts(["..."] * 3),  # token-less sentences
            doc_from_texts(["w000 w001"] * net.config.max_sentences),  # N = N_max
            doc_from_texts(["w000 w001"] * (net.config.max_sentences + 5)),
        ]
        for doc in cases:
            state = ExtractionState.initial(doc, net.config.max_sentences)
            dist = net.action_distribution(state)
            assert np.isfinite(dist.sentence_probs).all()
            assert 0.0 <= dist.stop_prob <= 1.0
            assert len(dist.remaining) == min(
                len(doc.sentences), net.config.max_sentences
            )
