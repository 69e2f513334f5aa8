import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_stochastic, random_store
from snapvote import ensemble
from snapvote.ensemble import EnsembleSpec
from snapvote.errors import EnsembleError, ShapeError
from snapvote.forest import ForestConfig, rf_fit, rf_predict_proba
from snapvote.trainer import Snapshot, SnapshotStore, inclusive_window, strict_window

SMALL_FOREST = ForestConfig(n_trees=3, seed=1)


def loop_mean(mats):
    n, K = mats[0].shape
    return [[sum(m[i][k] for m in mats) / len(mats) for k in range(K)] for i in range(n)]


def loop_argmax(rows, tol=1e-12):
    out = []
    for row in rows:
        top = max(row)
        out.append(next(k for k in range(len(row)) if row[k] >= top - tol))
    return out


class TestVote:
    def test_hand_example(self):
        probs, labels = ensemble.vote([np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])])
        np.testing.assert_allclose(probs, [[0.4, 0.6]], atol=1e-15)
        assert labels.tolist() == [1]

    def test_copies_are_idempotent(self, rng):
        m = random_stochastic(rng, 6, 4)
        probs, labels = ensemble.vote([m] * 5)
        np.testing.assert_allclose(probs, m, rtol=1e-15)
        np.testing.assert_array_equal(labels, m.argmax(axis=1))

    def test_matches_scalar_loop_and_sum_argmax(self, rng):
        mats = [random_stochastic(rng, 5, 3) for _ in range(7)]
        probs, labels = ensemble.vote(mats)
        np.testing.assert_allclose(probs, loop_mean(mats), rtol=0, atol=1e-12)
        sums = np.sum(mats, axis=0)
        np.testing.assert_array_equal(labels, sums.argmax(axis=1))
        assert labels.tolist() == loop_argmax(loop_mean(mats))

    def test_rounding_level_tie_goes_to_lowest_index(self):
        a = np.array([[0.1 + 0.2, 0.3]])  # 0.30000000000000004 vs 0.3
        _, labels = ensemble.vote([a[:, ::-1]])
        assert labels.tolist() == [0]
        assert ensemble.tie_argmax(np.array([[0.2, 0.5, 0.5 + 1e-9]])).tolist() == [2]

    def test_tie_breaks_to_lowest_index(self):
        _, labels = ensemble.vote([np.array([[0.5, 0.5], [0.2, 0.8]]),
                                   np.array([[0.5, 0.5], [0.8, 0.2]])])
        assert labels.tolist() == [0, 0]

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), S=st.integers(1, 12))
    def test_permutation_invariant_and_row_stochastic(self, seed, S):
        rng = np.random.default_rng(seed)
        mats = [random_stochastic(rng, 4, 5) for _ in range(S)]
        probs, labels = ensemble.vote(mats)
        perm = rng.permutation(S)
        probs2, labels2 = ensemble.vote([mats[i] for i in perm])
        assert probs.tobytes() == probs2.tobytes()
        np.testing.assert_array_equal(labels, labels2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_errors(self):
        with pytest.raises(EnsembleError):
            ensemble.vote([])
        with pytest.raises(ShapeError):
            ensemble.vote([np.zeros((2, 2)), np.zeros((3, 2))])

    def test_weighted_hook(self):
        a, b = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        probs, _ = ensemble.vote([a, b], weights=[3, 1])
        np.testing.assert_allclose(probs, [[0.75, 0.25]])


class TestHorizontal:
    def test_single_snapshot_window(self, rng):
        store = random_store(rng, [1, 2, 3], 5, 6, 3)
        pred = ensemble.horizontal_vote(store, EnsembleSpec("horizontal", strict_window(1, 3)))
        np.testing.assert_array_equal(pred.labels, store.get(2).softmax_test.argmax(axis=1))

    def test_full_scale_window_selects_two_hundred(self, rng):
        store = SnapshotStore("r", "f")
        m = random_stochastic(rng, 2, 9)
        for e in range(1, 1001):
            store.add(Snapshot(e, m, m, m, 0.0))
        pred = ensemble.horizontal_vote(store, EnsembleSpec("horizontal", strict_window(650, 851)))
        assert list(pred.members) == list(range(651, 851))
        pred = ensemble.horizontal_vote(store, EnsembleSpec("horizontal", inclusive_window(651, 850)))
        assert len(pred.members) == 200

    def test_matches_scalar_loop(self, rng):
        store = random_store(rng, range(1, 16), 4, 7, 3)
        spec = EnsembleSpec("horizontal", inclusive_window(3, 12))
        pred = ensemble.horizontal_vote(store, spec)
        mats = [store.get(e).softmax_test for e in range(3, 13)]
        np.testing.assert_allclose(pred.probs, loop_mean(mats), rtol=0, atol=1e-12)
        assert pred.labels.tolist() == loop_argmax(loop_mean(mats))

    def test_empty_window_reports_context(self, rng):
        store = random_store(rng, [1, 2], 3, 3, 2)
        with pytest.raises(EnsembleError, match=r"\(5, 9\).*strict.*1, 2"):
            ensemble.horizontal_vote(store, EnsembleSpec("horizontal", strict_window(5, 9)))


class TestStackedFeatures:
    def test_single_matrix_is_identity(self, rng):
        m = random_stochastic(rng, 4, 3)
        np.testing.assert_array_equal(ensemble.build_stacked_features([m]), m)

    def test_layout(self):
        F = ensemble.build_stacked_features([np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])])
        np.testing.assert_array_equal(F, [[0.6, 0.4, 0.2, 0.8]])

    def test_full_scale_width(self, rng):
        F = ensemble.build_stacked_features([random_stochastic(rng, 2, 9) for _ in range(200)])
        assert F.shape == (2, 1800)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ensemble.build_stacked_features([np.zeros((2, 3)), np.zeros((2, 4))])


class TestHorizontalStack:
    def test_single_snapshot_equals_plain_forest(self, rng):
        store = random_store(rng, [1, 2, 3], 20, 8, 3)
        y = rng.integers(0, 3, size=20)
        spec = EnsembleSpec("stacked", inclusive_window(2, 2 + 1), meta_classifier=SMALL_FOREST)
        spec = EnsembleSpec("stacked", strict_window(1, 3), meta_classifier=SMALL_FOREST)
        pred = ensemble.horizontal_stack(store, spec, y)
        s = store.get(2)
        model = rf_fit(s.softmax_train, y, SMALL_FOREST, n_classes=3)
        np.testing.assert_array_equal(pred.probs, rf_predict_proba(model, s.softmax_test))

    def test_informative_column_gives_perfect_training_fit(self, rng):
        y = rng.integers(0, 3, size=30)
        store = SnapshotStore("r", "f")
        for e in range(1, 6):
            train = random_stochastic(rng, 30, 3)
            train[:, 0] = 0.0
            train[y == 0, 0] = 1.0  # column 0 of every snapshot flags class 0
            train = train / train.sum(axis=1, keepdims=True)
            store.add(Snapshot(e, train, train[:2], train, 0.0))
        spec = EnsembleSpec("stacked", inclusive_window(1, 5),
                            meta_classifier=ForestConfig(n_trees=20, seed=0))
        pred = ensemble.horizontal_stack(store, spec, y)
        assert np.mean(pred.labels == y) == 1.0

    def test_matches_recomposition(self, rng):
        store = random_store(rng, range(1, 21), 25, 9, 4)
        y = rng.integers(0, 4, size=25)
        spec = EnsembleSpec("stacked", inclusive_window(1, 20), meta_classifier=SMALL_FOREST)
        pred = ensemble.horizontal_stack(store, spec, y)
        F_train = [[v for e in range(1, 21) for v in store.get(e).softmax_train[i]] for i in range(25)]
        F_test = [[v for e in range(1, 21) for v in store.get(e).softmax_test[i]] for i in range(9)]
        model = rf_fit(np.array(F_train), y, SMALL_FOREST, n_classes=4)
        probs = rf_predict_proba(model, np.array(F_test))
        np.testing.assert_array_equal(pred.probs, probs)
        assert pred.labels.tolist() == loop_argmax(probs.tolist())

    def test_column_order_matters(self, rng):
        # stacking is epoch-ordered: reversing the snapshot order changes the features
        mats = [random_stochastic(rng, 3, 2) for _ in range(3)]
        a = ensemble.build_stacked_features(mats)
        b = ensemble.build_stacked_features(mats[::-1])
        assert not np.array_equal(a, b)

    def test_asymmetric_epochs_rejected(self, rng):
        m = random_stochastic(rng, 4, 2)
        with pytest.raises(EnsembleError, match=r"train-only \[3\].*test-only \[4\]"):
            ensemble.stack_predict({1: m, 3: m}, {1: m, 4: m}, np.zeros(4, dtype=int), SMALL_FOREST)


class TestVertical:
    def test_single_layer_equals_that_forest(self, rng):
        store = random_store(rng, [5], 30, 10, 3, layers=("h7",))
        y = rng.integers(0, 3, size=30)
        spec = EnsembleSpec("vertical", objective_epoch=5, layers=("h7",), classifier=SMALL_FOREST)
        pred = ensemble.vertical_vote(store, spec, y)
        tr, te = store.get(5).layer_reps["h7"]
        probs = rf_predict_proba(rf_fit(tr, y, SMALL_FOREST, n_classes=3), te)
        np.testing.assert_array_equal(pred.probs, probs)

    def test_duplicated_layers_equal_single_prediction(self, rng):
        store = random_store(rng, [5], 30, 10, 3, layers=("h5",))
        s = store.get(5)
        s.layer_reps["h6"] = s.layer_reps["h5"]
        s.layer_reps["h7"] = s.layer_reps["h5"]
        y = rng.integers(0, 3, size=30)
        one = ensemble.vertical_vote(store, EnsembleSpec(
            "vertical", objective_epoch=5, layers=("h5",), classifier=SMALL_FOREST), y)
        three = ensemble.vertical_vote(store, EnsembleSpec(
            "vertical", objective_epoch=5, layers=("h5", "h6", "h7"), classifier=SMALL_FOREST), y)
        np.testing.assert_allclose(three.probs, one.probs, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(three.labels, one.labels)

    def test_matches_brute_force(self, rng):
        layers = ("h5", "h6", "h7")
        store = random_store(rng, [3, 4], 30, 12, 3, layers=layers)
        y = rng.integers(0, 3, size=30)
        spec = EnsembleSpec("vertical", objective_epoch=4, layers=layers, classifier=SMALL_FOREST)
        pred = ensemble.vertical_vote(store, spec, y)
        mats = []
        for name in layers:
            tr, te = store.get(4).layer_reps[name]
            mats.append(rf_predict_proba(rf_fit(tr, y, SMALL_FOREST, n_classes=3), te))
        np.testing.assert_allclose(pred.probs, loop_mean(mats), rtol=0, atol=1e-12)
        assert pred.labels.tolist() == loop_argmax(loop_mean(mats))
        assert set(pred.members) == set(layers)

    def test_missing_layer_names_layer_and_epoch(self, rng):
        store = random_store(rng, [2], 10, 4, 2, layers=("h5",))
        spec = EnsembleSpec("vertical", objective_epoch=2, layers=("h5", "h6"))
        with pytest.raises(EnsembleError, match="epoch 2.*h6"):
            ensemble.vertical_vote(store, spec, np.zeros(10, dtype=int))


class TestCombined:
    def test_one_epoch_window_equals_vertical(self, rng):
        layers = ("h1", "h2")
        store = random_store(rng, [1, 2, 3], 20, 6, 3, layers=layers)
        y = rng.integers(0, 3, size=20)
        comb = ensemble.combined_vote(store, EnsembleSpec(
            "combined", strict_window(1, 3), layers=layers, classifier=SMALL_FOREST), y)
        vert = ensemble.vertical_vote(store, EnsembleSpec(
            "vertical", objective_epoch=2, layers=layers, classifier=SMALL_FOREST), y)
        np.testing.assert_array_equal(comb.probs, vert.probs)

    def test_one_layer_equals_horizontal_vote_of_forests(self, rng):
        store = random_store(rng, [1, 2, 3], 20, 6, 3, layers=("h1",))
        y = rng.integers(0, 3, size=20)
        comb = ensemble.combined_vote(store, EnsembleSpec(
            "combined", inclusive_window(1, 3), layers=("h1",), classifier=SMALL_FOREST), y)
        mats = []
        for e in (1, 2, 3):
            tr, te = store.get(e).layer_reps["h1"]
            mats.append(rf_predict_proba(rf_fit(tr, y, SMALL_FOREST, n_classes=3), te))
        probs, labels = ensemble.vote(mats)
        np.testing.assert_array_equal(comb.probs, probs)

    def test_matches_six_forest_recomposition(self, rng):
        layers = ("h5", "h6")
        store = random_store(rng, [1, 2, 3, 4], 25, 8, 3, layers=layers)
        y = rng.integers(0, 3, size=25)
        spec = EnsembleSpec("combined", inclusive_window(2, 4), layers=layers, classifier=SMALL_FOREST)
        pred = ensemble.combined_vote(store, spec, y)
        per_epoch = []
        for e in (2, 3, 4):
            mats = []
            for name in layers:
                tr, te = store.get(e).layer_reps[name]
                mats.append(rf_predict_proba(rf_fit(tr, y, SMALL_FOREST, n_classes=3), te))
            per_epoch.append(np.array(loop_mean(mats)))
        expected = loop_mean(per_epoch)
        np.testing.assert_allclose(pred.probs, expected, rtol=0, atol=1e-12)
        assert pred.labels.tolist() == loop_argmax(expected)

    def test_missing_reps_annotated_with_epoch(self, rng):
        store = random_store(rng, [1, 2], 10, 4, 2)
        spec = EnsembleSpec("combined", inclusive_window(1, 2), layers=("h1",))
        with pytest.raises(EnsembleError, match="epoch 1"):
            ensemble.combined_vote(store, spec, np.zeros(10, dtype=int))


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            EnsembleSpec("vertical", objective_epoch=3)
        with pytest.raises(ValueError):
            EnsembleSpec("horizontal")
        with pytest.raises(ValueError):
            EnsembleSpec("bagging", strict_window(1, 3))
