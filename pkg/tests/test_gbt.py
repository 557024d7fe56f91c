import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from learned_lsm.errors import CorruptFileError, SchemaMismatchError, SingleClassError
from learned_lsm.features import LEAN12, feature_matrix
from learned_lsm.gbt import (LEAN_PARAMS, GBTModel, GBTParams, candidate_thresholds,
                             false_negatives, logistic_loss, margin_reference, sigmoid, train)
from learned_lsm.workload import SplitMix64


def toy():
    x = np.arange(20, dtype=np.float64) / 2.0  # 0.0 .. 9.5
    return x.reshape(-1, 1), (x >= 5).astype(np.int8)


def xor_clusters(seed=3, per=12):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for cx, cy in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        X.append(rng.normal([cx, cy], 0.05, size=(per, 2)))
        y += [cx ^ cy] * per
    return np.vstack(X), np.array(y)


@pytest.fixture(scope="module")
def toy_model():
    X, y = toy()
    return train(X, y, GBTParams(50, 2, 0.1, min_samples_leaf=1))


@pytest.fixture(scope="module")
def lean_model():
    rng = SplitMix64(31)
    keys = [rng.key() for _ in range(3000)]
    X = feature_matrix(keys, LEAN12)
    y = ((X[:, 8] < 5) ^ (X[:, 9] > 60)).astype(np.int8)  # x mod 10, x mod 97
    return train(X, y, LEAN_PARAMS, schema_id=LEAN12), X, y


class TestSigmoid:
    def test_values(self):
        assert sigmoid(0) == 0.5
        for z in (1, 10):
            assert sigmoid(z) + sigmoid(-z) == pytest.approx(1.0, abs=1e-15)

    def test_saturates(self):
        assert sigmoid(1000) == pytest.approx(1.0) and sigmoid(-1000) >= 0.0
        assert np.all(np.isfinite(sigmoid(np.array([-1e308, -800.0, 0.0, 800.0, 1e308]))))

    @given(st.floats(-700, 700), st.floats(-700, 700))
    def test_monotone(self, a, b):
        if a < b:
            assert sigmoid(a) <= sigmoid(b)

    def test_array_matches_scalar(self):
        z = np.linspace(-30, 30, 101)
        assert np.array_equal(sigmoid(z), np.array([sigmoid(float(v)) for v in z]))


class TestLoss:
    def test_values(self):
        assert logistic_loss(1, 1.0) == pytest.approx(0.0, abs=1e-11)
        assert logistic_loss(1, 0.5) == pytest.approx(math.log(2))
        assert logistic_loss(0, 0.5) == pytest.approx(math.log(2))
        assert round(logistic_loss(1, 0.5), 4) == 0.6931

    def test_clamped(self):
        assert math.isfinite(logistic_loss(1, 0.0))
        assert logistic_loss(1, 0.0) == pytest.approx(-math.log(1e-12))

    @given(st.integers(0, 1), st.floats(0, 1))
    def test_non_negative(self, y, p):
        assert logistic_loss(y, p) >= 0

    @given(st.integers(0, 1), st.floats(-8, 8))
    def test_gradient_is_residual(self, y, z):
        h = 1e-6
        num = (logistic_loss(y, sigmoid(z + h)) - logistic_loss(y, sigmoid(z - h))) / (2 * h)
        assert num == pytest.approx(sigmoid(z) - y, abs=1e-6)


class TestTrain:
    def test_toy_accuracy(self, toy_model):
        X, y = toy()
        assert (toy_model.decide(X) == y).all()
        assert false_negatives(toy_model, X, y).size == 0

    def test_toy_probabilities(self, toy_model):
        assert toy_model.predict_proba(np.array([1.0])) < 0.5
        assert toy_model.predict_proba(np.array([9.0])) > 0.5
        assert toy_model.decide(np.array([1.0])) == 0 and toy_model.decide(np.array([9.0])) == 1

    def test_toy_is_separable(self):
        # brute force: some single threshold classifies every point
        X, y = toy()
        x = X[:, 0]
        assert any(((x > t) == y.astype(bool)).all() for t in x)

    def test_xor(self):
        X, y = xor_clusters()
        model = train(X, y, GBTParams(50, 2, 0.3, min_samples_leaf=1))
        assert (model.decide(X) == y).all()
        centroids = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
        assert list(model.decide(centroids)) == [0, 1, 1, 0]

    def test_identical_features_give_base_rate(self):
        X = np.ones((40, 3))
        y = np.array([1] * 10 + [0] * 30)
        model = train(X, y, GBTParams(20, 3, 0.1))
        assert model.predict_proba(np.ones((5, 3))) == pytest.approx(np.full(5, 0.25), abs=1e-12)

    def test_loss_non_increasing(self, lean_model, toy_model):
        for m in (lean_model[0], toy_model):
            assert all(b <= a + 1e-9 for a, b in zip(m.train_loss, m.train_loss[1:]))

    def test_calibration(self, lean_model):
        model, X, y = lean_model
        assert abs(model.predict_proba(X).mean() - y.mean()) <= 0.05

    def test_depth_bound(self, lean_model):
        model = lean_model[0]
        assert len(model.trees) == LEAN_PARAMS.n_trees
        for tree in model.trees:
            assert tree.depth() <= LEAN_PARAMS.max_depth
            leaves = tree.feature < 0
            assert np.all(np.isfinite(tree.value[leaves]))
            assert np.all(np.abs(tree.value[leaves]) <= 4.0)

    def test_deterministic(self):
        X, y = xor_clusters()
        a = train(X, y, GBTParams(10, 3, 0.1)).to_bytes()
        b = train(X, y, GBTParams(10, 3, 0.1)).to_bytes()
        assert a == b

    @pytest.mark.parametrize("y", [np.zeros(10), np.ones(10)])
    def test_single_class_rejected(self, y):
        with pytest.raises(SingleClassError, match="constant"):
            train(np.random.default_rng(0).random((10, 2)), y)

    def test_schema_mismatch(self):
        with pytest.raises(SchemaMismatchError):
            train(np.zeros((4, 3)), [0, 1, 0, 1], schema_id=LEAN12)

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            train(np.zeros((1, 2)), [1])
        with pytest.raises(ValueError):
            train(np.array([[np.nan], [1.0]]), [0, 1])


class TestPredict:
    def test_zero_tree_model(self):
        m = GBTModel.constant(0.5, LEAN12)
        assert m.predict_proba(np.zeros(12)) == 0.5
        assert m.decide(np.zeros(12)) == 1

    def test_flat_layout_matches_pointer_walk(self, lean_model):
        model, X, _ = lean_model
        ref = np.empty(X.shape[0])
        margin_reference(X, model.nodes, model.roots, model.initial_score, model.learning_rate, ref)
        assert np.array_equal(model.predict_margin(X), ref)

    def test_python_tree_walk_matches(self, lean_model):
        model, X, _ = lean_model
        for row in X[:50]:
            s = sum(t.predict_row(row) for t in model.trees)
            assert model.predict_margin(row) == pytest.approx(
                model.initial_score + model.learning_rate * s, rel=1e-12)

    def test_decide_is_threshold(self, lean_model):
        model, X, _ = lean_model
        assert np.array_equal(model.decide(X), (model.predict_proba(X) >= 0.5).astype(np.int8))
        assert all(model.decide(X[i]) == model.decide(X)[i] for i in range(100))

    def test_proba_open_interval(self, lean_model):
        model, X, _ = lean_model
        p = model.predict_proba(X)
        assert np.all((p > 0) & (p < 1))


class TestFalseNegatives:
    def test_constant_zero(self):
        m = GBTModel.constant(0.01, LEAN12)
        y = np.array([1, 0, 1, 1])
        assert list(false_negatives(m, np.zeros((4, 12)), y)) == [0, 2, 3]

    def test_constant_one(self):
        m = GBTModel.constant(0.99, LEAN12)
        assert false_negatives(m, np.zeros((4, 12)), [1, 0, 1, 1]).size == 0


class TestSerialization:
    def test_round_trip(self, lean_model):
        model, X, _ = lean_model
        back = GBTModel.from_bytes(model.to_bytes())
        assert back.to_bytes() == model.to_bytes()
        assert back.schema_id == LEAN12 and back.params == model.params
        rng = np.random.default_rng(0)
        probe = np.vstack([X[:500], rng.normal(size=(500, 12)) * 50])
        assert np.array_equal(back.predict_proba(probe), model.predict_proba(probe))
        assert len(model.to_bytes()) == model.serialized_size()

    def test_header(self, toy_model):
        data = toy_model.to_bytes()
        assert data[:8] == b"LLSMGBT1"
        assert int.from_bytes(data[8:12], "little") == 1

    @pytest.mark.parametrize("mutate", [lambda b: b[:-1], lambda b: b"LLSMGBT2" + b[8:],
                                        lambda b: b[:60] + bytes([b[60] ^ 4]) + b[61:]])
    def test_corruption(self, toy_model, mutate):
        with pytest.raises(CorruptFileError):
            GBTModel.from_bytes(mutate(toy_model.to_bytes()))


class TestCandidates:
    def test_midpoints(self):
        assert list(candidate_thresholds(np.array([3.0, 1.0, 2.0, 2.0]))) == [1.5, 2.5]

    def test_cap(self):
        thr = candidate_thresholds(np.arange(10_000, dtype=float))
        assert thr.size <= 256 and np.all(np.diff(thr) > 0)

    def test_constant_column(self):
        assert candidate_thresholds(np.ones(5)).size == 0
