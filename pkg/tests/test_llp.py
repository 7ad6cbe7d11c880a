import numpy as np
import pytest
from scipy import optimize

from fontid import llp
from fontid.errors import (
    DegenerateTrainingError,
    InsufficientLabelsError,
    ParameterError,
)
from fontid.llp import (
    LlpModel,
    label_propagate,
    llp_objective_and_gradient,
    predict,
    predict_many,
    similarity,
    similarity_matrix,
    train_llp,
)


class TestSimilarity:
    def test_identical_vectors(self):
        x = np.array([0.1, 0.2, 0.7])
        assert similarity(x, x, 300.0) == 1.0

    def test_distance_equals_sigma(self):
        xi = np.zeros(4)
        xj = np.array([2.0, 0, 0, 0])
        assert similarity(xi, xj, 2.0) == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_squared_distance_two_sigma_squared(self):
        sigma = 1.7
        xi = np.zeros(2)
        xj = np.array([sigma * np.sqrt(2.0), 0.0])
        assert similarity(xi, xj, sigma) == pytest.approx(np.exp(-2.0), abs=1e-12)

    def test_sigma_validation(self):
        with pytest.raises(ParameterError):
            similarity(np.zeros(2), np.zeros(2), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            similarity(np.zeros(2), np.zeros(3), 1.0)


class TestSimilarityMatrix:
    def test_single_vector(self):
        s = similarity_matrix(np.array([[0.3, 0.7]]), 1.0)
        np.testing.assert_array_equal(s, [[1.0]])

    def test_identical_pair(self):
        x = np.array([[0.5, 0.5], [0.5, 0.5]])
        np.testing.assert_array_equal(similarity_matrix(x, 2.0), np.ones((2, 2)))

    def test_matches_scalar_op(self, rng):
        x = rng.random((5, 7))
        s = similarity_matrix(x, 0.9)
        for i in range(5):
            for j in range(5):
                expected = 1.0 if i == j else similarity(x[i], x[j], 0.9)
                assert s[i, j] == pytest.approx(expected, abs=1e-15)

    def test_exactly_symmetric_unit_diagonal(self, rng):
        x = rng.random((40, 20))
        s = similarity_matrix(x, 0.5, block=16)
        np.testing.assert_array_equal(s, s.T)
        np.testing.assert_array_equal(np.diag(s), np.ones(40))


class TestLabelPropagation:
    def chain_matrix(self):
        return np.array([[1.0, 0.6, 1e-9], [0.6, 1.0, 0.6], [1e-9, 0.6, 1.0]])

    def test_all_labeled_clamped(self):
        s = self.chain_matrix()
        out = label_propagate(s, np.array([0, 1, 2]))
        np.testing.assert_array_equal(out, np.eye(3))

    def test_proximity_dominance(self):
        s = np.array([[1.0, 1.0, 1e-12], [1.0, 1.0, 1e-12], [1e-12, 1e-12, 1.0]])
        out = label_propagate(s, np.array([0, -1, 2]))
        assert out[1, 0] > 0.99

    def test_three_node_chain_fixed_point(self):
        out = label_propagate(self.chain_matrix(), np.array([0, -1, 1]))
        np.testing.assert_allclose(out[1], [0.5, 0.5, 0.0], atol=1e-6)

    def test_chain_symmetric_for_any_alpha(self):
        for alpha in (0.3, 0.6, 0.9, 0.99):
            out = label_propagate(self.chain_matrix(), np.array([0, -1, 1]), alpha=alpha)
            np.testing.assert_allclose(out[1], [0.5, 0.5, 0.0], atol=1e-6)

    def test_rows_sum_to_one(self, rng):
        x = rng.random((12, 5))
        s = similarity_matrix(x, 0.7)
        labels = np.full(12, -1)
        labels[[0, 5, 9]] = [0, 1, 2]
        out = label_propagate(s, labels)
        np.testing.assert_allclose(out.sum(axis=1), np.ones(12), atol=1e-6)

    def test_no_labels_rejected(self):
        with pytest.raises(InsufficientLabelsError):
            label_propagate(np.eye(3), np.array([-1, -1, -1]))

    def test_alpha_validated(self):
        with pytest.raises(ParameterError):
            label_propagate(np.eye(2), np.array([0, -1]), alpha=1.0)


def three_class_blobs(rng, n_per_class=40, spread=0.35):
    centers = np.array(
        [[1.0, 0.0, 0.0, 0.2], [0.0, 1.0, 0.0, -0.2], [0.0, 0.0, 1.0, 0.0]]
    )
    x = np.vstack([c + spread * rng.normal(size=(n_per_class, 4)) for c in centers])
    y = np.repeat(np.arange(3), n_per_class)
    return x, y


def reference_softmax_regression(x, y, n_classes=3):
    """Independent plain multinomial logistic fit via scipy L-BFGS."""
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    d = xb.shape[1]

    def loss_grad(wflat):
        w = wflat.reshape(n_classes, d)
        z = xb @ w.T
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        ll = -np.sum(np.log(p[np.arange(len(y)), y] + 1e-300))
        g = p.copy()
        g[np.arange(len(y)), y] -= 1.0
        return ll, (g.T @ xb).ravel()

    res = optimize.minimize(loss_grad, np.zeros(n_classes * d), jac=True, method="L-BFGS-B")
    return res.x.reshape(n_classes, d)


class TestTrainLlp:
    def test_lambda_zero_matches_plain_logistic(self, rng):
        x, y = three_class_blobs(rng, n_per_class=120)
        held_x, held_y = three_class_blobs(np.random.default_rng(77), n_per_class=60)
        model = train_llp(x, y, None, sigma=1.0, lambda_weight=0.0, max_iter=3000)
        ref_w = reference_softmax_regression(x, y)
        ref_pred = np.argmax(
            np.hstack([held_x, np.ones((held_x.shape[0], 1))]) @ ref_w.T, axis=1
        )
        got_pred = np.argmax(predict_many(model, held_x), axis=1)
        assert np.mean(got_pred == ref_pred) >= 0.99

    def test_two_cluster_boundary_in_density_gap(self, rng):
        # one label per cluster plus dense unlabeled filler: every filler
        # point must end up classified with its own cluster
        left = -1.0 + 0.15 * rng.normal(size=(60, 1))
        right = 1.0 + 0.15 * rng.normal(size=(60, 1))
        labeled_x = np.array([[-1.0], [1.0], [5.0]])  # third class far away
        labeled_y = np.array([0, 1, 2])
        unlabeled = np.vstack([left, right])
        model = train_llp(labeled_x, labeled_y, unlabeled, sigma=0.5, lambda_weight=2.0)
        pred_left = np.argmax(predict_many(model, left), axis=1)
        pred_right = np.argmax(predict_many(model, right), axis=1)
        assert np.all(pred_left == 0)
        assert np.all(pred_right == 1)

    def test_missing_class_rejected(self, rng):
        x = rng.random((10, 3))
        y = np.array([0, 1] * 5)  # class 2 absent
        with pytest.raises(DegenerateTrainingError):
            train_llp(x, y, None)

    def test_objective_nonincreasing(self, rng):
        # the final loss can never exceed the zero-weight loss, and longer
        # budgets can never end higher than shorter ones
        x, y = three_class_blobs(rng, n_per_class=20)
        losses = [
            train_llp(x, y, None, sigma=1.0, lambda_weight=0.5, max_iter=m).final_loss
            for m in (1, 5, 25, 125)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_gradient_matches_finite_differences(self, rng):
        for trial in range(10):
            r = np.random.default_rng(1000 + trial)
            nl, nu, d = 5, 4, 3
            lx = r.random((nl, d))
            ly = r.integers(0, 3, nl)
            ly[:3] = [0, 1, 2]
            ux = r.random((nu, d))
            x = np.vstack([lx, ux])
            xb = np.hstack([x, np.ones((nl + nu, 1))])
            yoh = np.zeros((nl, 3))
            yoh[np.arange(nl), ly] = 1.0
            s = similarity_matrix(x, 0.8)
            lam = 0.3
            w = r.normal(size=(3, d + 1))
            _, grad = llp_objective_and_gradient(w, xb, yoh, nl, s, lam)
            num = np.zeros_like(w)
            h = 1e-6
            for i in range(3):
                for j in range(d + 1):
                    wp, wm = w.copy(), w.copy()
                    wp[i, j] += h
                    wm[i, j] -= h
                    fp, _ = llp_objective_and_gradient(wp, xb, yoh, nl, s, lam)
                    fm, _ = llp_objective_and_gradient(wm, xb, yoh, nl, s, lam)
                    num[i, j] = (fp - fm) / (2 * h)
            rel = np.abs(num - grad) / np.maximum(np.abs(num), 1e-8)
            assert rel.max() < 1e-4

    def test_training_deterministic(self, rng):
        x, y = three_class_blobs(rng, n_per_class=15)
        a = train_llp(x, y, None, sigma=1.0, lambda_weight=0.1, max_iter=200)
        b = train_llp(x.copy(), y.copy(), None, sigma=1.0, lambda_weight=0.1, max_iter=200)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestPredict:
    def test_zero_weights_uniform(self):
        model = LlpModel(weights=np.zeros((3, 5)), sigma=300.0, lambda_weight=0.1)
        np.testing.assert_allclose(predict(model, np.random.rand(4)), np.full(3, 1 / 3))

    def test_posterior_sums_to_one(self, rng):
        model = LlpModel(weights=rng.normal(size=(3, 8)), sigma=1.0, lambda_weight=0.0)
        p = predict_many(model, rng.random((50, 7)))
        np.testing.assert_allclose(p.sum(axis=1), np.ones(50), atol=1e-9)

    def test_training_points_classified(self, rng):
        x, y = three_class_blobs(rng, n_per_class=50, spread=0.15)
        model = train_llp(x, y, None, sigma=1.0, lambda_weight=0.0)
        pred = np.argmax(predict_many(model, x), axis=1)
        assert np.mean(pred == y) >= 0.95

    def test_parametric_recall_ignores_pool(self, rng):
        # deleting the unlabeled pool after training cannot change predictions
        x, y = three_class_blobs(rng, n_per_class=20)
        pool = rng.random((30, 4))
        model = train_llp(x, y, pool, sigma=1.0, lambda_weight=1.0)
        probe = rng.random((10, 4))
        before = predict_many(model, probe)
        del pool
        np.testing.assert_array_equal(predict_many(model, probe), before)

    def test_shape_mismatch(self):
        model = LlpModel(weights=np.zeros((3, 5)), sigma=1.0, lambda_weight=0.0)
        with pytest.raises(ParameterError):
            predict(model, np.zeros(7))

    def test_json_roundtrip(self, rng, tmp_path):
        model = train_llp(*three_class_blobs(rng, 10)[:2], None, sigma=2.0, lambda_weight=0.25)
        path = tmp_path / "model.json"
        model.save(path)
        back = LlpModel.load(path)
        np.testing.assert_array_equal(back.weights, model.weights)
        assert back.sigma == model.sigma
        assert back.lambda_weight == model.lambda_weight
        assert back.classes == model.classes
