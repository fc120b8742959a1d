import numpy as np
import pytest

from alseq.corpus import LabelScheme, build_corpus
from alseq.crf.evaluate import evaluate, span_f1
from alseq.crf.features import FeatureRegistry, featurize_batch, keyed_features
from alseq.crf.model import (
    CrfModel,
    batch_posteriors,
    forward_backward,
    load_model,
    marginals_from_scores,
    save_model,
    viterbi,
    viterbi_from_scores,
)
from alseq.crf.train import TrainConfig, objective_and_gradient, train
from alseq.corpus import EntitySpan
from alseq.embeddings import EmbeddingMatrix, separated_means, synth_embeddings

from oracles import enumerate_all, finite_difference_gradient


def random_model_scores(rng, n, M):
    return rng.normal(scale=1.5, size=(n, M)), rng.normal(scale=1.0, size=(M, M))


class TestFeaturization:
    def test_value_count_with_pos(self):
        corpus = build_corpus(
            [[("Alpha", "B-X"), ("beta", "O"), ("42", "O")]],
            pos_tags=[["NN", "VB", "CD"]],
        )
        emb = EmbeddingMatrix(
            np.arange(12, dtype=np.float32).reshape(3, 4), corpus.manifest_hash
        )
        feats = keyed_features(corpus.sentences[0], emb, has_pos=True)
        assert all(len(f) == (4 + 7) * 3 for f in feats)  # 33 values per position

    def test_value_count_without_pos(self):
        corpus = build_corpus([[("Alpha", "B-X"), ("beta", "O"), ("42", "O")]])
        emb = EmbeddingMatrix(
            np.arange(12, dtype=np.float32).reshape(3, 4), corpus.manifest_hash
        )
        feats = keyed_features(corpus.sentences[0], emb, has_pos=False)
        assert all(len(f) == (4 + 6) * 3 for f in feats)

    def test_boundary_sentinels_keep_count(self):
        corpus = build_corpus([[("only", "O")]])
        emb = EmbeddingMatrix(np.ones((1, 4), dtype=np.float32), corpus.manifest_hash)
        feats = keyed_features(corpus.sentences[0], emb, has_pos=False)
        assert len(feats[0]) == (4 + 6) * 3
        keys = {k for k, _ in feats[0]}
        assert ("low", -1, "<bos>") in keys
        assert ("low", 1, "<eos>") in keys

    def test_lexical_flags(self):
        corpus = build_corpus([[("Alpha", "O"), ("42", "O"), ("beta", "O")]])
        emb = EmbeddingMatrix(np.zeros((3, 2), dtype=np.float32), corpus.manifest_hash)
        feats = keyed_features(corpus.sentences[0], emb, has_pos=False)
        by_key = dict(feats[0])
        assert by_key[("istitle", 0)] == 1.0  # "Alpha"
        assert by_key[("isdigit", 1)] == 1.0  # "42" is the next token
        assert by_key[("islower", 0)] == 0.0

    def test_unseen_categorical_maps_to_noop(self, small_corpus, small_embeddings):
        registry = FeatureRegistry.build(
            list(small_corpus.sentences[:2]), small_embeddings, has_pos=False
        )
        batch_known = featurize_batch(
            list(small_corpus.sentences[:2]), small_embeddings, registry, False
        )
        batch_unknown = featurize_batch(
            list(small_corpus.sentences[50:52]), small_embeddings, registry, False
        )
        # Unknown surfaces drop their categorical entries; embeddings remain.
        assert batch_unknown.X.shape[1] == batch_known.X.shape[1]
        assert batch_unknown.n_positions > 0


class TestInferenceOracle:
    @pytest.mark.parametrize("n,M", [(1, 2), (2, 3), (4, 4), (6, 3), (5, 2)])
    def test_marginals_match_enumeration(self, rng, n, M):
        unary, trans = random_model_scores(rng, n, M)
        table = marginals_from_scores(unary, trans)
        log_z, unary_ref, pair_ref, _, _ = enumerate_all(unary, trans)
        assert table.log_partition == pytest.approx(log_z, abs=1e-8)
        assert np.allclose(table.unary, unary_ref, atol=1e-8)
        assert np.allclose(table.pairwise, pair_ref, atol=1e-8)

    @pytest.mark.parametrize("n,M", [(2, 2), (4, 3), (6, 4)])
    def test_viterbi_matches_enumeration(self, rng, n, M):
        unary, trans = random_model_scores(rng, n, M)
        result = viterbi_from_scores(unary, trans)
        log_z, _, _, best_path, best_score = enumerate_all(unary, trans)
        assert np.array_equal(result.path, best_path)
        assert result.joint_log_prob == pytest.approx(best_score - log_z, abs=1e-8)

    def test_zero_weights_uniform(self):
        M, n = 4, 5
        table = marginals_from_scores(np.zeros((n, M)), np.zeros((M, M)))
        assert np.allclose(table.unary, 1.0 / M, atol=1e-12)
        result = viterbi_from_scores(np.zeros((n, M)), np.zeros((M, M)))
        assert np.exp(result.joint_log_prob) == pytest.approx(M ** (-n), abs=1e-12)

    def test_length_one_softmax(self, rng):
        scores = rng.normal(size=(1, 5))
        table = marginals_from_scores(scores, np.zeros((5, 5)))
        expected = np.exp(scores[0]) / np.exp(scores[0]).sum()
        assert np.allclose(table.unary[0], expected, atol=1e-12)

    def test_peaked_unary_zero_transitions(self, rng):
        unary = np.zeros((6, 3))
        argmaxes = rng.integers(3, size=6)
        unary[np.arange(6), argmaxes] = 50.0
        result = viterbi_from_scores(unary, np.zeros((3, 3)))
        assert np.array_equal(result.path, argmaxes)

    def test_marginal_consistency(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 9))
            M = int(rng.integers(2, 5))
            unary, trans = random_model_scores(rng, n, M)
            table = marginals_from_scores(unary, trans)
            assert np.allclose(table.unary.sum(axis=1), 1.0, atol=1e-8)
            assert np.allclose(table.pairwise[0].sum(), 1.0, atol=1e-8)
            # Pairwise rows/columns must reproduce the unary marginals.
            assert np.allclose(table.pairwise.sum(axis=1), table.unary[1:], atol=1e-8)
            assert np.allclose(table.pairwise.sum(axis=2), table.unary[:-1], atol=1e-8)

    def test_joint_prob_at_most_one(self, rng):
        for _ in range(10):
            unary, trans = random_model_scores(rng, 7, 3)
            result = viterbi_from_scores(unary, trans)
            assert result.joint_log_prob <= 0.0

    def test_viterbi_tie_breaks_to_lowest_index(self):
        result = viterbi_from_scores(np.zeros((4, 3)), np.zeros((3, 3)))
        assert np.array_equal(result.path, np.zeros(4, dtype=np.int64))

    def test_batched_matches_sequential(self, small_corpus, small_embeddings):
        sents = list(small_corpus.sentences[:20])
        model = train(
            sents,
            small_embeddings,
            small_corpus.label_scheme,
            TrainConfig(max_iterations=15),
        )
        batch = model.featurize(sents, small_embeddings)
        seq_m = forward_backward(model, batch)
        seq_v = viterbi(model, batch)
        bat_m, bat_v = batch_posteriors(model, batch, want_pairwise=True)
        for a, b in zip(seq_m, bat_m):
            assert np.allclose(a.unary, b.unary, atol=1e-10)
            assert np.allclose(a.pairwise, b.pairwise, atol=1e-10)
            assert a.log_partition == pytest.approx(b.log_partition, abs=1e-10)
        for a, b in zip(seq_v, bat_v):
            assert np.array_equal(a.path, b.path)
            assert a.joint_log_prob == pytest.approx(b.joint_log_prob, abs=1e-10)


def tiny_training_setup(seed=0, n_sent=30):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_sent):
        n = int(rng.integers(2, 6))
        sent = []
        for i in range(n):
            if rng.random() < 0.3:
                sent.append((f"e{rng.integers(20)}", "B-X"))
            else:
                sent.append((f"w{rng.integers(20)}", "O"))
        rows.append(sent)
    corpus = build_corpus(rows, label_scheme=LabelScheme(("X",)))
    spec = separated_means(("X",), dim=3, separation=5.0, seed=1)
    emb = synth_embeddings(corpus, spec, seed=2)
    return corpus, emb


class TestObjective:
    def test_uniform_value_is_n_log_m(self):
        corpus, emb = tiny_training_setup()
        sents = list(corpus.sentences)
        model = train(sents, emb, corpus.label_scheme, TrainConfig(max_iterations=1))
        M = corpus.label_scheme.n_tags
        zeroed = CrfModel(
            corpus.label_scheme,
            model.registry,
            np.zeros_like(model.state_weights),
            np.zeros_like(model.trans_weights),
            has_pos=False,
        )
        batch = zeroed.featurize(sents, emb)
        gold = [np.asarray(s.tag_ids) for s in sents]
        value, _, _ = objective_and_gradient(zeroed, batch, gold, c1=0.0, c2=0.0)
        total_tokens = sum(s.n_tokens for s in sents)
        assert value == pytest.approx(-np.log(M) * total_tokens, abs=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        corpus, emb = tiny_training_setup(seed=4, n_sent=6)
        sents = list(corpus.sentences)
        base = train(sents, emb, corpus.label_scheme, TrainConfig(max_iterations=1))
        K, M = base.state_weights.shape
        batch = base.featurize(sents, emb)
        gold = [np.asarray(s.tag_ids) for s in sents]
        c2 = 0.05

        def value_at(theta):
            W = theta[: K * M].reshape(K, M)
            T = theta[K * M :].reshape(M, M)
            m = CrfModel(corpus.label_scheme, base.registry, W, T, False)
            v, _, _ = objective_and_gradient(m, batch, gold, c1=0.0, c2=c2)
            return v

        theta = rng.normal(scale=0.3, size=K * M + M * M)
        W = theta[: K * M].reshape(K, M)
        T = theta[K * M :].reshape(M, M)
        model = CrfModel(corpus.label_scheme, base.registry, W, T, False)
        _, gW, gT = objective_and_gradient(model, batch, gold, c1=0.0, c2=c2)
        analytic = np.concatenate([gW.ravel(), gT.ravel()])
        numeric = finite_difference_gradient(value_at, theta, h=1e-5)
        denom = np.maximum(np.abs(numeric), 1.0)
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-4

    def test_gradient_small_at_optimum(self):
        corpus, emb = tiny_training_setup(seed=7, n_sent=10)
        sents = list(corpus.sentences)
        config = TrainConfig(c1=0.0, c2=0.1, use_l1=False, epsilon=1e-7,
                             stop_delta=0.0, max_iterations=300)
        model = train(sents, emb, corpus.label_scheme, config)
        batch = model.featurize(sents, emb)
        gold = [np.asarray(s.tag_ids) for s in sents]
        _, gW, gT = objective_and_gradient(model, batch, gold, c1=0.0, c2=0.1)
        gnorm = np.linalg.norm(np.concatenate([gW.ravel(), gT.ravel()]))
        assert gnorm < 1e-4


class TestTraining:
    def test_separable_reaches_perfect_f1(self):
        corpus, emb = tiny_training_setup(seed=1, n_sent=40)
        sents = list(corpus.sentences)
        model = train(sents, emb, corpus.label_scheme, TrainConfig())
        metrics = evaluate(model, sents, emb)
        assert metrics["f1"] == 1.0

    def test_bitwise_deterministic(self):
        corpus, emb = tiny_training_setup(seed=2, n_sent=20)
        sents = list(corpus.sentences)
        a = train(sents, emb, corpus.label_scheme, TrainConfig())
        b = train(sents, emb, corpus.label_scheme, TrainConfig())
        assert np.array_equal(a.state_weights, b.state_weights)
        assert np.array_equal(a.trans_weights, b.trans_weights)

    def test_huge_l2_shrinks_weights(self):
        corpus, emb = tiny_training_setup(seed=3, n_sent=20)
        sents = list(corpus.sentences)
        model = train(
            sents, emb, corpus.label_scheme,
            TrainConfig(c1=0.0, use_l1=False, c2=1e6),
        )
        norm = np.linalg.norm(
            np.concatenate(
                [model.state_weights.ravel(), model.trans_weights.ravel()]
            )
        )
        assert norm < 1e-2

    def test_l1_produces_sparsity(self):
        corpus, emb = tiny_training_setup(seed=5, n_sent=30)
        sents = list(corpus.sentences)
        dense = train(sents, emb, corpus.label_scheme,
                      TrainConfig(c1=0.0, use_l1=False, c2=0.1))
        sparse = train(sents, emb, corpus.label_scheme,
                       TrainConfig(c1=0.5, c2=0.1))
        frac_dense = (dense.state_weights == 0).mean()
        frac_sparse = (sparse.state_weights == 0).mean()
        assert frac_sparse > frac_dense

    def test_empty_training_set_rejected(self, small_embeddings, small_corpus):
        with pytest.raises(ValueError):
            train([], small_embeddings, small_corpus.label_scheme, TrainConfig())

    def test_disallow_unobserved_pins_weights(self):
        corpus, emb = tiny_training_setup(seed=6, n_sent=15)
        sents = list(corpus.sentences)
        model = train(
            sents, emb, corpus.label_scheme,
            TrainConfig(allow_unobserved=False, max_iterations=20),
        )
        gold_transitions = set()
        for s in sents:
            tags = s.tag_ids
            gold_transitions.update(zip(tags[:-1], tags[1:]))
        M = corpus.label_scheme.n_tags
        for a in range(M):
            for b in range(M):
                if (a, b) not in gold_transitions:
                    assert model.trans_weights[a, b] == 0.0

    def test_train_status_recorded(self):
        corpus, emb = tiny_training_setup(seed=8, n_sent=10)
        model = train(
            list(corpus.sentences), emb, corpus.label_scheme,
            TrainConfig(max_iterations=2, stop_delta=0.0),
        )
        assert model.train_status["status"] == "max_iterations"
        assert model.train_status["iterations"] == 2

    def test_model_round_trip(self, tmp_path):
        corpus, emb = tiny_training_setup(seed=9, n_sent=12)
        sents = list(corpus.sentences)
        model = train(sents, emb, corpus.label_scheme, TrainConfig(max_iterations=10))
        path = tmp_path / "model.npz"
        with open(path, "wb") as fh:
            save_model(model, fh)
        loaded = load_model(path)
        assert np.array_equal(loaded.state_weights, model.state_weights)
        assert np.array_equal(loaded.trans_weights, model.trans_weights)
        assert loaded.registry.keys() == model.registry.keys()
        assert evaluate(loaded, sents, emb) == evaluate(model, sents, emb)


class TestEvaluation:
    def test_identical_predictions_f1_one(self):
        gold = [[EntitySpan("X", 0, 1)], [EntitySpan("Y", 2, 2)]]
        assert span_f1(gold, gold)["f1"] == 1.0

    def test_all_outside_predictions(self):
        gold = [[EntitySpan("X", 0, 1)]]
        metrics = span_f1(gold, [[]])
        assert metrics["recall"] == 0.0
        assert metrics["f1"] == 0.0

    def test_boundary_mismatch_counts_nothing(self):
        gold = [[EntitySpan("X", 0, 1)]]
        pred = [[EntitySpan("X", 0, 0)]]
        metrics = span_f1(gold, pred)
        assert metrics["precision"] == 0.0
        assert metrics["recall"] == 0.0

    def test_class_mismatch_counts_nothing(self):
        gold = [[EntitySpan("X", 0, 1)]]
        pred = [[EntitySpan("Y", 0, 1)]]
        assert span_f1(gold, pred)["f1"] == 0.0
