import numpy as np
import pytest
from hypothesis import given, strategies as st

from tempseg import autodiff as ad
from tempseg import sampling as sp


class TestFindBoundaries:
    def test_basic(self):
        assert sp.find_boundaries([0, 0, 1, 1, 2]) == [2, 4]

    def test_constant(self):
        assert sp.find_boundaries([3] * 7) == []

    def test_alternating(self):
        assert sp.find_boundaries([0, 1, 0, 1]) == [1, 2, 3]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sp.find_boundaries([])


class TestLabelsToSegments:
    def test_basic(self):
        runs = sp.labels_to_segments([0, 0, 1, 1, 2])
        assert runs == [sp.SegmentRun(0, 0, 2), sp.SegmentRun(1, 2, 4),
                        sp.SegmentRun(2, 4, 5)]

    def test_single_label(self):
        assert sp.labels_to_segments([4] * 9) == [sp.SegmentRun(4, 0, 9)]

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=60))
    def test_round_trip(self, labels):
        runs = sp.labels_to_segments(labels)
        np.testing.assert_array_equal(sp.expand_segments(runs), labels)
        for a, b in zip(runs[:-1], runs[1:]):
            assert a.class_label != b.class_label
            assert a.end == b.start

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
    def test_boundary_count_matches_segments(self, labels):
        assert len(sp.find_boundaries(labels)) == len(sp.labels_to_segments(labels)) - 1

    def test_degenerate_run_rejected(self):
        with pytest.raises(ValueError):
            sp.SegmentRun(0, 3, 3)


class TestSelectHardExamples:
    def test_all_correct_single_segment(self):
        labels = np.zeros(30, dtype=int)
        plan = sp.select_hard_examples(labels, labels, k_per_class=4,
                                       boundary_radius=2,
                                       rng=np.random.default_rng(0))
        assert set(plan) == {0}
        assert len(plan[0]) == 4
        assert len(np.unique(plan[0])) == 4

    def test_misclassified_plus_boundary_plus_fill(self):
        # 20 samples, two runs, boundary at 10; class 0 misclassified at 1,4,7
        labels = np.array([0] * 10 + [1] * 10)
        predictions = labels.copy()
        predictions[[1, 4, 7]] = 1
        plan = sp.select_hard_examples(predictions, labels, k_per_class=8,
                                       boundary_radius=2,
                                       rng=np.random.default_rng(1))
        chosen = set(plan[0].tolist())
        assert {1, 4, 7} <= chosen
        assert chosen & {8, 9}, "boundary-zone supplement missing"
        assert len(plan[0]) == 8

    def test_class_absent_from_labels(self):
        labels = np.array([0, 0, 2, 2])
        plan = sp.select_hard_examples(labels, labels, 2, 1,
                                       np.random.default_rng(2))
        assert set(plan) == {0, 2}

    def test_odd_budget_rejected(self):
        labels = np.zeros(5, dtype=int)
        with pytest.raises(ValueError, match="even"):
            sp.select_hard_examples(labels, labels, 3, 1,
                                    np.random.default_rng(0))

    def test_small_class_capped_at_population(self):
        labels = np.array([0] * 17 + [1] * 3)
        plan = sp.select_hard_examples(labels, labels, 8, 2,
                                       np.random.default_rng(3))
        assert len(plan[1]) == 3
        assert len(plan[0]) == 8

    def test_misclassified_overflow_subsampled(self):
        labels = np.zeros(40, dtype=int)
        labels[20:] = 1
        predictions = 1 - labels  # everything wrong
        plan = sp.select_hard_examples(predictions, labels, 6, 2,
                                       np.random.default_rng(4))
        for c in (0, 1):
            assert len(plan[c]) == 6
            assert np.all(labels[plan[c]] == c)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, size=60)
        predictions = rng.integers(0, 3, size=60)
        a = sp.select_hard_examples(predictions, labels, 8, 2,
                                    np.random.default_rng(42))
        b = sp.select_hard_examples(predictions, labels, 8, 2,
                                    np.random.default_rng(42))
        assert set(a) == set(b)
        for c in a:
            np.testing.assert_array_equal(a[c], b[c])

    @given(st.integers(0, 2 ** 31 - 1))
    def test_selection_well_formed(self, seed):
        rng = np.random.default_rng(seed)
        t = int(rng.integers(5, 50))
        labels = rng.integers(0, 4, size=t)
        predictions = rng.integers(0, 4, size=t)
        plan = sp.select_hard_examples(predictions, labels, 4, 2, rng)
        half = 2
        for c, idx in plan.items():
            assert len(np.unique(idx)) == len(idx)
            assert np.all(labels[idx] == c)
            assert len(idx) <= 4
            wrong = np.nonzero((labels == c) & (predictions != c))[0]
            if len(wrong) <= half:
                assert set(wrong.tolist()) <= set(idx.tolist())


class TestSegmentFeatures:
    def test_identical_rows_reproduce_vector(self):
        u = np.array([0.6, 0.8])
        projected = ad.Tensor(np.tile(u, (5, 1)))
        feats = sp.segment_features(projected, np.zeros(5, dtype=int))
        assert len(feats) == 1
        cls, vec = feats[0]
        assert cls == 0
        np.testing.assert_allclose(vec.values, u, atol=1e-15)

    def test_orthogonal_pair_averages_and_renormalizes(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        feats = sp.segment_features(ad.Tensor(rows), [2, 2])
        _, vec = feats[0]
        np.testing.assert_allclose(vec.values, [1 / np.sqrt(2), 1 / np.sqrt(2)])

    def test_zero_mean_run_dropped(self):
        rows = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        feats = sp.segment_features(ad.Tensor(rows), [0, 0, 1])
        assert len(feats) == 1
        assert feats[0][0] == 1

    def test_one_output_per_run_and_unit_norms(self):
        rng = np.random.default_rng(6)
        rows = rng.normal(size=(30, 4))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        labels = np.repeat([0, 1, 0, 2], [8, 7, 9, 6])
        feats = sp.segment_features(ad.Tensor(rows), labels)
        assert [c for c, _ in feats] == [0, 1, 0, 2]
        for _, vec in feats:
            assert abs(np.linalg.norm(vec.values) - 1.0) < 1e-9


class TestBuildExampleSet:
    def test_empty_plan_materializes_nothing(self):
        projected = ad.Tensor(np.eye(4))
        assert sp.materialize_examples(projected, {}) == []

    def test_zero_rows_excluded(self):
        rows = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        got = sp.materialize_examples(ad.Tensor(rows), {0: np.array([0, 1, 2])})
        assert len(got) == 2

    def test_sizes_match_procedure_enumeration(self):
        rng = np.random.default_rng(7)
        labels = np.repeat([0, 1, 2, 1, 0], 10)
        predictions = labels.copy()
        predictions[rng.integers(0, 50, size=12)] = rng.integers(0, 3, size=12)
        rows = rng.normal(size=(50, 5))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        samples, segments = sp.build_example_set(
            ad.Tensor(rows), predictions, labels, np.random.default_rng(8),
            k_per_class=6, boundary_radius=2)
        # no zero rows here, so per class exactly min(k, population) samples
        want = sum(min(6, int(np.sum(labels == c))) for c in np.unique(labels))
        assert len(samples) == want
        assert len(segments) == 5
        assert all(e.level == "sample" for e in samples)
        assert all(e.level == "segment" for e in segments)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(9)
        labels = rng.integers(0, 3, size=40)
        predictions = rng.integers(0, 3, size=40)
        rows = rng.normal(size=(40, 4))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        a_s, a_g = sp.build_example_set(ad.Tensor(rows), predictions, labels,
                                        np.random.default_rng(11))
        b_s, b_g = sp.build_example_set(ad.Tensor(rows), predictions, labels,
                                        np.random.default_rng(11))
        assert len(a_s) == len(b_s) and len(a_g) == len(b_g)
        for ea, eb in zip(a_s + a_g, b_s + b_g):
            assert ea.class_label == eb.class_label
            assert ea.embedding.values.tobytes() == eb.embedding.values.tobytes()
