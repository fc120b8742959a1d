import numpy as np
import pytest

from alseq.corpus import build_corpus
from alseq.embeddings import separated_means, synth_embeddings
from alseq.positive.cluster import ClusterAssignment, ClusterParams, cluster_density
from alseq.positive.pipeline import (
    PositiveIdParams,
    build_positive_set,
    identify_positive_tokens,
    positive_set_metrics,
)
from alseq.positive.reduce import ReduceParams, reduce_semisupervised


def blobs(rng, specs):
    """specs: list of (count, center, sigma); returns (X, labels)."""
    points = []
    labels = []
    for label, (count, center, sigma) in enumerate(specs):
        points.append(rng.normal(center, sigma, size=(count, len(center))))
        labels.extend([label] * count)
    return np.concatenate(points), np.array(labels)


class TestReduce:
    def test_two_blob_recovery(self, rng):
        X, truth = blobs(
            rng, [(250, np.zeros(64), 1.0), (250, np.r_[20.0, np.zeros(63)], 1.0)]
        )
        coords = reduce_semisupervised(X, None, seed=5)
        c0 = coords[truth == 0].mean(axis=0)
        c1 = coords[truth == 1].mean(axis=0)
        d0 = np.linalg.norm(coords - c0, axis=1)
        d1 = np.linalg.norm(coords - c1, axis=1)
        pred = (d1 < d0).astype(int)
        accuracy = max((pred == truth).mean(), (pred != truth).mean())
        assert accuracy >= 0.99

    def test_bit_identical_given_seed(self, rng):
        X, _ = blobs(rng, [(120, np.zeros(8), 1.0), (80, np.full(8, 6.0), 1.0)])
        a = reduce_semisupervised(X, None, seed=17)
        b = reduce_semisupervised(X, None, seed=17)
        assert np.array_equal(a, b)

    def test_no_labels_equals_unsupervised(self, rng):
        X, _ = blobs(rng, [(150, np.zeros(8), 1.0)])
        unsup = reduce_semisupervised(X, None, seed=3)
        all_unknown = reduce_semisupervised(X, -np.ones(150, dtype=np.int64), seed=3)
        assert np.array_equal(unsup, all_unknown)

    def test_supervision_changes_output(self, rng):
        X, truth = blobs(rng, [(100, np.zeros(8), 1.0), (100, np.full(8, 4.0), 1.0)])
        labels = -np.ones(200, dtype=np.int64)
        labels[:30] = truth[:30]
        labels[100:130] = truth[100:130]
        sup = reduce_semisupervised(X, labels, seed=3)
        unsup = reduce_semisupervised(X, None, seed=3)
        assert not np.array_equal(sup, unsup)

    def test_supervision_tightens_labeled_classes(self, rng):
        # Two overlapping blobs: labels should pull same-class points together.
        X, truth = blobs(rng, [(150, np.zeros(6), 2.0), (150, np.full(6, 2.0), 2.0)])
        labels = truth.copy().astype(np.int64)
        sup = reduce_semisupervised(X, labels, seed=3)

        def class_spread(coords):
            spread = 0.0
            for cls in (0, 1):
                pts = coords[truth == cls]
                spread += np.linalg.norm(pts - pts.mean(axis=0), axis=1).mean()
            return spread / 2

        unsup = reduce_semisupervised(X, None, seed=3)
        scale_sup = np.abs(sup - sup.mean(axis=0)).max()
        scale_unsup = np.abs(unsup - unsup.mean(axis=0)).max()
        assert class_spread(sup) / scale_sup < class_spread(unsup) / scale_unsup

    def test_too_few_points_rejected(self, rng):
        X = rng.normal(size=(10, 4))
        with pytest.raises(ValueError):
            reduce_semisupervised(X, None, ReduceParams(n_neighbors=15), seed=0)


class TestClusterDensity:
    def test_three_blob_sizes(self, rng):
        X, truth = blobs(
            rng,
            [
                (800, np.array([0.0, 0.0]), 0.5),
                (100, np.array([10.0, 0.0]), 0.5),
                (100, np.array([0.0, 10.0]), 0.5),
            ],
        )
        assignment, scores = cluster_density(X, ClusterParams(min_cluster_size=15))
        assert assignment.n_clusters == 3
        sizes = sorted(
            (size for label, size in assignment.sizes.items() if label != -1),
            reverse=True,
        )
        assert abs(sizes[0] - 800) <= 20
        assert abs(sizes[1] - 100) <= 20
        assert abs(sizes[2] - 100) <= 20
        largest = assignment.largest_cluster()
        members = assignment.labels == largest
        assert (truth[members] == 0).mean() > 0.98

    def test_matches_reference_clustering(self, rng):
        # Cross-check against an independent implementation of the same
        # density-clustering construction.
        from sklearn.cluster import HDBSCAN
        from sklearn.metrics import adjusted_rand_score

        X, _ = blobs(
            rng,
            [
                (300, np.array([0.0, 0.0]), 0.6),
                (200, np.array([8.0, 1.0]), 0.7),
                (120, np.array([-2.0, 9.0]), 0.5),
            ],
        )
        assignment, _ = cluster_density(
            X, ClusterParams(min_cluster_size=20, min_samples=10)
        )
        reference = HDBSCAN(min_cluster_size=20, min_samples=10).fit(X)
        assert adjusted_rand_score(assignment.labels, reference.labels_) > 0.99

    def test_uniform_noise_all_noise(self, rng):
        X = rng.uniform(0.0, 1.0, size=(400, 2))
        assignment, scores = cluster_density(X, ClusterParams(min_cluster_size=100))
        assert assignment.n_clusters == 0
        assert (assignment.labels == -1).all()

    def test_planted_outlier_scores_top_percent(self, rng):
        X, _ = blobs(rng, [(400, np.zeros(2), 0.5)])
        X = np.vstack([X, [25.0, 25.0]])  # 50 sigma away from the blob
        _, scores = cluster_density(X, ClusterParams(min_cluster_size=15))
        cutoff = np.quantile(scores, 0.99)
        assert scores[-1] >= cutoff

    def test_scores_in_unit_interval(self, rng):
        X, _ = blobs(rng, [(300, np.zeros(2), 1.0), (150, np.full(2, 8.0), 1.0)])
        _, scores = cluster_density(X, ClusterParams(min_cluster_size=15))
        assert scores.min() >= 0.0
        assert scores.max() <= 1.0

    def test_degenerate_identical_points(self):
        X = np.ones((50, 2))
        with pytest.warns(RuntimeWarning, match="degenerate"):
            assignment, scores = cluster_density(X, ClusterParams(min_cluster_size=10))
        assert assignment.degenerate
        assert assignment.n_clusters == 1
        assert (scores == 0.0).all()

    def test_too_few_points_rejected(self, rng):
        with pytest.raises(ValueError):
            cluster_density(rng.normal(size=(5, 2)), ClusterParams(min_cluster_size=10))

    def test_deterministic(self, rng):
        X, _ = blobs(rng, [(200, np.zeros(2), 1.0), (100, np.full(2, 7.0), 1.0)])
        a1, s1 = cluster_density(X, ClusterParams(min_cluster_size=15))
        a2, s2 = cluster_density(X, ClusterParams(min_cluster_size=15))
        assert np.array_equal(a1.labels, a2.labels)
        assert np.array_equal(s1, s2)


class TestBuildPositiveSet:
    def make_assignment(self, labels):
        labels = np.asarray(labels)
        unique, counts = np.unique(labels, return_counts=True)
        return ClusterAssignment(
            labels=labels,
            sizes={int(u): int(c) for u, c in zip(unique, counts)},
            n_clusters=int((unique != -1).sum()),
        )

    def test_set_arithmetic(self):
        labels = np.array([0] * 900 + [1] * 50 + [2] * 50)
        assignment = self.make_assignment(labels)
        scores = np.zeros(1000)
        scores[:10] = 0.99  # outliers inside the largest cluster
        pset = build_positive_set(assignment, scores, outlier_fraction=0.01)
        assert len(pset.core) == 100
        assert len(pset.outliers) == 10
        assert 100 <= len(pset) <= 110
        assert pset.tokens == pset.core | pset.outliers

    def test_single_cluster_only_outliers(self):
        labels = np.zeros(200, dtype=np.int64)
        assignment = self.make_assignment(labels)
        scores = np.linspace(0, 1, 200)
        pset = build_positive_set(assignment, scores, outlier_fraction=0.01)
        assert len(pset.core) == 0
        assert len(pset.outliers) == 2  # ceil(0.01 * 200)
        assert pset.tokens == frozenset({198, 199})

    def test_equal_size_tie_takes_lower_label(self):
        labels = np.array([0] * 50 + [1] * 50 + [2] * 10)
        assignment = self.make_assignment(labels)
        pset = build_positive_set(assignment, np.zeros(110), outlier_fraction=0.0)
        assert pset.largest_cluster == 0
        # Cluster 1 and 2 members form P.
        assert len(pset.core) == 60

    def test_no_clusters_flagged(self):
        labels = -np.ones(100, dtype=np.int64)
        assignment = self.make_assignment(labels)
        scores = np.linspace(0, 1, 100)
        with pytest.warns(RuntimeWarning, match="no density clusters"):
            pset = build_positive_set(assignment, scores, outlier_fraction=0.05)
        assert pset.no_clusters
        assert len(pset.core) == 0
        assert len(pset.outliers) == 5

    def test_outlier_ties_break_by_index(self):
        labels = np.zeros(10, dtype=np.int64)
        assignment = self.make_assignment(labels)
        scores = np.full(10, 0.5)
        pset = build_positive_set(assignment, scores, outlier_fraction=0.2)
        assert pset.outliers == frozenset({0, 1})

    def test_fraction_monotonicity(self):
        labels = np.array([0] * 80 + [1] * 20)
        assignment = self.make_assignment(labels)
        scores = np.linspace(0, 1, 100)
        small = build_positive_set(assignment, scores, outlier_fraction=0.01)
        large = build_positive_set(assignment, scores, outlier_fraction=0.10)
        assert small.tokens <= large.tokens

    def test_noise_excluded_from_core_but_outlier_eligible(self):
        labels = np.array([0] * 90 + [-1] * 10)
        assignment = self.make_assignment(labels)
        scores = np.zeros(100)
        scores[95] = 1.0
        pset = build_positive_set(assignment, scores, outlier_fraction=0.01)
        assert len(pset.core) == 0  # noise is not a cluster
        assert 95 in pset.outliers

    def test_largest_cluster_members_never_in_core(self):
        labels = np.array([0] * 70 + [1] * 30)
        assignment = self.make_assignment(labels)
        pset = build_positive_set(assignment, np.zeros(100), outlier_fraction=0.0)
        assert all(idx >= 70 for idx in pset.core)

    def test_token_index_mapping(self):
        labels = np.array([0, 0, 0, 1, 1])
        assignment = self.make_assignment(labels)
        token_indices = np.array([10, 20, 30, 40, 50])
        pset = build_positive_set(
            assignment, np.zeros(5), outlier_fraction=0.0, token_indices=token_indices
        )
        assert pset.core == frozenset({40, 50})


class TestMetricsAndPipeline:
    def make_corpus(self, n_sentences=200, positive_rate=0.1, seed=0):
        rng = np.random.default_rng(seed)
        rows = []
        for _ in range(n_sentences):
            n = int(rng.integers(5, 12))
            rows.append(
                [
                    (f"w{rng.integers(50)}", "B-X" if rng.random() < positive_rate else "O")
                    for _ in range(n)
                ]
            )
        return build_corpus(rows)

    def test_perfect_prediction_metrics(self):
        corpus = self.make_corpus()
        gold = frozenset(
            t.global_index
            for s in corpus.sentences
            for t in s.tokens
            if t.gold_tag != 0
        )
        metrics = positive_set_metrics(gold, corpus)
        assert metrics == {
            "precision_neg": 1.0,
            "recall_pos": 1.0,
            "precision_pos": 1.0,
            "f1": 1.0,
        }

    def test_empty_prediction(self):
        corpus = self.make_corpus()
        metrics = positive_set_metrics(frozenset(), corpus)
        assert metrics["recall_pos"] == 0.0

    def test_pipeline_recovers_planted_positives(self):
        corpus = self.make_corpus(n_sentences=150, positive_rate=0.1, seed=3)
        spec = separated_means(("X",), dim=16, separation=10.0, seed=1)
        emb = synth_embeddings(corpus, spec, seed=2)
        token_indices = np.arange(corpus.n_tokens)
        result = identify_positive_tokens(
            emb.rows.astype(np.float64),
            None,
            token_indices,
            PositiveIdParams(n_epochs=100),
            seed=4,
        )
        metrics = positive_set_metrics(result.positive_set, corpus)
        assert metrics["recall_pos"] >= 0.9

    def test_pipeline_deterministic(self):
        corpus = self.make_corpus(n_sentences=80, seed=5)
        spec = separated_means(("X",), dim=8, separation=10.0, seed=1)
        emb = synth_embeddings(corpus, spec, seed=2)
        idx = np.arange(corpus.n_tokens)
        a = identify_positive_tokens(
            emb.rows.astype(np.float64), None, idx, PositiveIdParams(n_epochs=60), seed=7
        )
        b = identify_positive_tokens(
            emb.rows.astype(np.float64), None, idx, PositiveIdParams(n_epochs=60), seed=7
        )
        assert a.positive_set.tokens == b.positive_set.tokens
        assert np.array_equal(a.coords, b.coords)

    def test_diagnostics_export(self, tmp_path):
        corpus = self.make_corpus(n_sentences=60, seed=6)
        spec = separated_means(("X",), dim=8, separation=10.0, seed=1)
        emb = synth_embeddings(corpus, spec, seed=2)
        idx = np.arange(corpus.n_tokens)
        result = identify_positive_tokens(
            emb.rows.astype(np.float64), None, idx, PositiveIdParams(n_epochs=60), seed=7
        )
        out = tmp_path / "diag.csv"
        result.export_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0].startswith("token_index,x,y,cluster")
        assert len(lines) == corpus.n_tokens + 1
