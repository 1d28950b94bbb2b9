import numpy as np
import pytest

from backend.models.config_models import MODEL_DEFAULTS, ModelSpec
from backend.services.classifier_service import (
    TrainedModel,
    fit_logistic,
    logistic_gradient,
    logistic_loss,
    nb_log_posteriors,
    predict,
    predict_many,
    stratified_holdout,
    train,
    tree_internal_nodes,
)
from backend.services.errors import ArityMismatch, ConfigError, NonFiniteFeature, SingleClassTraining


def _blobs(rng, n=40, shift=2.0):
    X = np.vstack([rng.normal(-shift, 0.5, size=(n, 2)), rng.normal(shift, 0.5, size=(n, 2))])
    y = np.array([0] * n + [1] * n)
    return X, y


def _overlapping(rng, n=120, d=4):
    X = rng.normal(size=(n, d))
    y = (X[:, 0] + 0.8 * rng.normal(size=n) > 0).astype(np.int64)
    return X, y


def test_lr_separates_linearly_separable_data(rng):
    X, y = _blobs(rng)
    labels, _ = predict_many(train(ModelSpec(kind="LR"), X, y), X)
    assert np.array_equal(labels, y)


def test_lr_gradient_matches_finite_differences(rng):
    X, y = _overlapping(rng)
    for _ in range(5):
        theta = rng.normal(size=X.shape[1] + 1)
        h = 1e-6
        numeric = np.array([
            (logistic_loss(theta + h * e, X, y, 0.1) - logistic_loss(theta - h * e, X, y, 0.1)) / (2 * h)
            for e in np.eye(theta.shape[0])
        ])
        analytic = logistic_gradient(theta, X, y, 0.1)
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(analytic)


def test_lr_reaches_the_same_optimum_from_two_starts(rng):
    X, y = _overlapping(rng)
    ridge = 1e-4
    a, _, _ = fit_logistic(X, y, ridge=ridge, max_iter=5000, tol=1e-7)
    b, _, _ = fit_logistic(X, y, ridge=ridge, max_iter=5000, tol=1e-7,
                           theta0=rng.normal(size=X.shape[1] + 1))
    assert abs(logistic_loss(a, X, y, ridge) - logistic_loss(b, X, y, ridge)) < 1e-6


def test_lr_zero_weights_score_one_half():
    model = TrainedModel(kind="LR", hyperparameters=MODEL_DEFAULTS["LR"], n_features=3,
                         parameters={"weights": [0.0, 0.0, 0.0], "bias": 0.0})
    assert predict(model, np.array([4.0, -2.0, 7.5])) == (0, 0.5)


def test_knn_hand_example():
    X = np.array([[0.0], [0.1], [5.0], [5.1], [5.2]])
    y = np.array([1, 1, 0, 0, 0])
    label, score = predict(train(ModelSpec(kind="KNN"), X, y), np.array([0.05]))
    assert label == 1
    assert score == pytest.approx(2 / 3)


def test_knn_one_neighbour_recalls_training_labels(rng):
    X, y = _overlapping(rng)
    model = train(ModelSpec(kind="KNN", hyperparameters={"k": 1}), X, y)
    labels, _ = predict_many(model, X)
    assert np.array_equal(labels, y)


def test_knn_rejects_zero_neighbours(rng):
    X, y = _blobs(rng)
    with pytest.raises(ConfigError):
        train(ModelSpec(kind="KNN", hyperparameters={"k": 0}), X, y)


def test_nb_learns_class_means(rng):
    n = 500
    X = np.vstack([rng.normal([0.0, 1.0], [1.0, 2.0], size=(n, 2)),
                   rng.normal([2.0, -1.0], [0.5, 1.0], size=(n, 2))])
    y = np.array([0] * n + [1] * n)
    means = np.asarray(train(ModelSpec(kind="NB"), X, y).parameters["means"])
    assert np.all(np.abs(means[0] - [0.0, 1.0]) < 3 * np.array([1.0, 2.0]) / np.sqrt(n))
    assert np.all(np.abs(means[1] - [2.0, -1.0]) < 3 * np.array([0.5, 1.0]) / np.sqrt(n))


def test_nb_posteriors_sum_to_one(rng):
    X, y = _overlapping(rng)
    model = train(ModelSpec(kind="NB"), X, y)
    posteriors = np.exp(nb_log_posteriors(model.parameters, rng.normal(size=(50, X.shape[1]))))
    np.testing.assert_allclose(posteriors.sum(axis=1), 1.0, atol=1e-12)


def test_nb_midpoint_of_symmetric_classes(rng):
    X0 = rng.normal(1.0, 0.7, size=(30, 3))
    X = np.vstack([X0, -X0])
    y = np.array([0] * 30 + [1] * 30)
    _, score = predict(train(ModelSpec(kind="NB"), X, y), np.zeros(3))
    assert score == pytest.approx(0.5, abs=1e-9)


def _xor_lattice():
    corners = [((0.0, 0.0), 0, 30), ((1.0, 1.0), 0, 25), ((0.0, 1.0), 1, 28), ((1.0, 0.0), 1, 22)]
    X = np.vstack([np.tile(point, (count, 1)) for point, _, count in corners])
    y = np.concatenate([[label] * count for _, label, count in corners])
    return X, y


def test_dt_learns_xor():
    X, y = _xor_lattice()
    model = train(ModelSpec(kind="DT"), X, y)
    labels, scores = predict_many(model, X)
    assert tree_internal_nodes(model) >= 2
    assert np.mean(labels == y) > 0.9
    assert np.all((scores > 0) & (scores < 1))


def test_dt_pruning_never_increases_holdout_error(rng):
    for seed in range(5):
        X, y = _overlapping(rng, n=80)
        model = train(ModelSpec(kind="DT", hyperparameters={"seed": seed}), X, y)
        params = model.parameters
        assert params["holdout_errors_after"] <= params["holdout_errors_before"]
        assert params["holdout_size"] > 0


def test_stratified_holdout_takes_a_fifth_of_each_class():
    y = np.array([0] * 50 + [1] * 20)
    mask = stratified_holdout(y, 5, seed=1)
    assert mask[y == 0].sum() == 10
    assert mask[y == 1].sum() == 4
    assert np.array_equal(mask, stratified_holdout(y, 5, seed=1))


@pytest.mark.parametrize("kind", ["LR", "KNN", "NB", "DT"])
def test_training_is_deterministic(kind, rng):
    X, y = _overlapping(rng, n=60)
    assert train(ModelSpec(kind=kind), X, y).model_dump_json() == train(ModelSpec(kind=kind), X, y).model_dump_json()


@pytest.mark.parametrize("kind", ["LR", "NB", "DT"])
def test_single_class_training(kind, rng):
    with pytest.raises(SingleClassTraining):
        train(ModelSpec(kind=kind), rng.normal(size=(10, 2)), np.ones(10, dtype=int))


def test_knn_accepts_a_single_class(rng):
    model = train(ModelSpec(kind="KNN"), rng.normal(size=(5, 2)), np.ones(5, dtype=int))
    assert predict(model, np.zeros(2)) == (1, 1.0)


def test_non_finite_training_value(rng):
    X, y = _overlapping(rng, n=20)
    X[3, 1] = np.nan
    with pytest.raises(NonFiniteFeature) as e:
        train(ModelSpec(kind="NB"), X, y)
    assert e.value.context == {"row": 3, "column": 1}


def test_predict_arity_mismatch(rng):
    X, y = _blobs(rng)
    with pytest.raises(ArityMismatch):
        predict(train(ModelSpec(kind="NB"), X, y), np.zeros(3))


@pytest.mark.parametrize("kind", ["LR", "KNN", "NB", "DT"])
def test_json_round_trip_predicts_identically(kind, rng):
    X, y = _overlapping(rng, n=60)
    model = train(ModelSpec(kind=kind), X, y, feature_names=[f"f{i}" for i in range(X.shape[1])])
    restored = TrainedModel.model_validate_json(model.model_dump_json())
    queries = rng.normal(size=(10, X.shape[1]))
    for a, b in zip(predict_many(model, queries), predict_many(restored, queries)):
        np.testing.assert_array_equal(a, b)
    assert restored.feature_names == model.feature_names
