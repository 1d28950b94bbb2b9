import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import expit, logsumexp

from backend.models.config_models import ModelSpec
from backend.services.errors import (
    ArityMismatch,
    ConfigError,
    DataError,
    LengthMismatch,
    NonFiniteFeature,
    NumericalInstability,
    SingleClassTraining,
)

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1


class TrainedModel(BaseModel):
    """Learned parameters of one classifier, serializable as a versioned JSON document."""
    schema_version: int = MODEL_SCHEMA_VERSION
    kind: str
    hyperparameters: Dict[str, Any]
    n_features: int
    feature_names: List[str] = Field(default_factory=list)
    parameters: Dict[str, Any]


def _check_training_data(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).ravel()
    if X.ndim != 2:
        raise ArityMismatch(f"training matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} training rows for {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise DataError("cannot train on an empty matrix")
    if not np.all(np.isfinite(X)):
        row, col = np.argwhere(~np.isfinite(X))[0]
        raise NonFiniteFeature("training matrix holds a non-finite value", row=int(row), column=int(col))
    if np.any((y != 0) & (y != 1)):
        raise DataError("labels must be binary (1 = MDD, 0 = NC)")
    return X, y


def _require_both_classes(y: np.ndarray, kind: str) -> None:
    if y.shape[0] < 2 or np.unique(y).shape[0] < 2:
        raise SingleClassTraining(f"{kind} needs both classes in the training data", kind=kind)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def logistic_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray, ridge: float) -> float:
    """Mean negative log-likelihood plus ridge * |w|^2; theta = [w..., b]."""
    z = _with_bias(X) @ theta
    w = theta[:-1]
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + ridge * np.dot(w, w))


def logistic_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    Xb = _with_bias(X)
    residual = expit(Xb @ theta) - y
    grad = Xb.T @ residual / X.shape[0]
    grad[:-1] += 2.0 * ridge * theta[:-1]
    return grad


def fit_logistic(X: np.ndarray, y: np.ndarray, ridge: float = 1e-8, max_iter: int = 1000,
                 tol: float = 1e-6, theta0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int, bool]:
    """Gradient descent with Barzilai-Borwein steps and Armijo backtracking."""
    theta = np.zeros(X.shape[1] + 1) if theta0 is None else np.asarray(theta0, dtype=np.float64).copy()
    loss = logistic_loss(theta, X, y, ridge)
    grad = logistic_gradient(theta, X, y, ridge)
    step = 1.0
    for iteration in range(1, max_iter + 1):
        if np.linalg.norm(grad) < tol:
            return theta, iteration - 1, True
        grad_sq = np.dot(grad, grad)
        for _ in range(60):
            candidate = theta - step * grad
            candidate_loss = logistic_loss(candidate, X, y, ridge)
            if candidate_loss <= loss - 1e-4 * step * grad_sq:
                break
            step *= 0.5
        else:
            # No decrease possible at machine precision.
            return theta, iteration, np.linalg.norm(grad) < tol
        new_grad = logistic_gradient(candidate, X, y, ridge)
        s = candidate - theta
        g = new_grad - grad
        curvature = np.dot(s, g)
        step = float(np.dot(s, s) / curvature) if curvature > 0 else 1.0
        theta, loss, grad = candidate, candidate_loss, new_grad
    return theta, max_iter, bool(np.linalg.norm(grad) < tol)


def _train_lr(X: np.ndarray, y: np.ndarray, hp: Dict[str, Any]) -> Dict[str, Any]:
    _require_both_classes(y, "LR")
    theta, iterations, converged = fit_logistic(X, y, float(hp["ridge"]), int(hp["max_iter"]), float(hp["tol"]))
    if not np.all(np.isfinite(theta)):
        raise NumericalInstability("logistic regression diverged")
    if not converged:
        logger.debug(f"LR stopped after {iterations} iterations without reaching tol={hp['tol']}")
    return {"weights": theta[:-1].tolist(), "bias": float(theta[-1]),
            "iterations": int(iterations), "converged": bool(converged)}


def _score_lr(params: Dict[str, Any], X: np.ndarray) -> np.ndarray:
    return expit(X @ np.asarray(params["weights"]) + params["bias"])


# ---------------------------------------------------------------------------
# k nearest neighbours
# ---------------------------------------------------------------------------

def _train_knn(X: np.ndarray, y: np.ndarray, hp: Dict[str, Any]) -> Dict[str, Any]:
    if int(hp["k"]) < 1:
        raise ConfigError("KNN needs k >= 1")
    return {"X": X.tolist(), "y": y.tolist()}


def _score_knn(params: Dict[str, Any], X: np.ndarray, k: int) -> np.ndarray:
    train_X = np.asarray(params["X"], dtype=np.float64)
    train_y = np.asarray(params["y"], dtype=np.int64)
    k = min(k, train_X.shape[0])
    rows = np.arange(train_X.shape[0])
    scores = np.empty(X.shape[0])
    for i, x in enumerate(X):
        distances = np.sqrt(np.sum((train_X - x) ** 2, axis=1))
        nearest = np.lexsort((rows, distances))[:k]
        scores[i] = train_y[nearest].sum() / k
    return scores


# ---------------------------------------------------------------------------
# Gaussian naive Bayes
# ---------------------------------------------------------------------------

def _train_nb(X: np.ndarray, y: np.ndarray, hp: Dict[str, Any]) -> Dict[str, Any]:
    _require_both_classes(y, "NB")
    floor = float(hp["var_floor"])
    params: Dict[str, Any] = {"classes": [0, 1], "means": [], "variances": [], "priors": []}
    for c in (0, 1):
        rows = X[y == c]
        params["means"].append(rows.mean(axis=0).tolist())
        params["variances"].append(np.maximum(rows.var(axis=0), floor).tolist())
        params["priors"].append(rows.shape[0] / X.shape[0])
    return params


def nb_log_posteriors(params: Dict[str, Any], X: np.ndarray) -> np.ndarray:
    """Normalized log posteriors, columns ordered (NC, MDD)."""
    means = np.asarray(params["means"])
    variances = np.asarray(params["variances"])
    joint = np.empty((X.shape[0], 2))
    for c in (0, 1):
        log_likelihood = -0.5 * np.sum(np.log(2.0 * np.pi * variances[c])
                                       + (X - means[c]) ** 2 / variances[c], axis=1)
        joint[:, c] = np.log(params["priors"][c]) + log_likelihood
    return joint - logsumexp(joint, axis=1, keepdims=True)


def _score_nb(params: Dict[str, Any], X: np.ndarray) -> np.ndarray:
    return np.exp(nb_log_posteriors(params, X)[:, 1])


# ---------------------------------------------------------------------------
# Decision tree with reduced-error pruning
# ---------------------------------------------------------------------------

def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, totals, out=np.zeros_like(counts, dtype=np.float64), where=totals > 0)
    logs = np.log2(p, out=np.zeros_like(p), where=p > 0)
    return -np.sum(p * logs, axis=-1)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int) -> Optional[Tuple[int, float, float]]:
    """(feature, threshold, gain) of the highest positive information-gain split."""
    n = y.shape[0]
    onehot = np.eye(2)[y]
    parent = float(_entropy_rows(onehot.sum(axis=0)[None, :])[0])
    best: Optional[Tuple[int, float, float]] = None
    for feature in range(X.shape[1]):
        order = np.argsort(X[:, feature], kind="stable")
        values = X[order, feature]
        left = np.cumsum(onehot[order], axis=0)
        n_left = np.arange(1, n + 1)
        valid = (values[:-1] < values[1:]) & (n_left[:-1] >= min_leaf) & (n - n_left[:-1] >= min_leaf)
        positions = np.flatnonzero(valid)
        if positions.size == 0:
            continue
        lc = left[positions]
        rc = left[-1] - lc
        nl = n_left[positions].astype(np.float64)
        weighted = (nl * _entropy_rows(lc) + (n - nl) * _entropy_rows(rc)) / n
        i = int(np.argmin(weighted))
        gain = parent - float(weighted[i])
        if gain > 1e-12 and (best is None or gain > best[2]):
            p = positions[i]
            best = (feature, float((values[p] + values[p + 1]) / 2.0), gain)
    return best


def _leaf(counts: np.ndarray) -> Dict[str, Any]:
    return {"leaf": True, "counts": [int(counts[0]), int(counts[1])]}


def _grow(X: np.ndarray, y: np.ndarray, min_leaf: int) -> List[Dict[str, Any]]:
    nodes: List[Dict[str, Any]] = []

    def build(rows: np.ndarray) -> int:
        counts = np.bincount(y[rows], minlength=2)
        index = len(nodes)
        nodes.append(_leaf(counts))
        if counts.min() == 0 or rows.shape[0] < 2 * min_leaf:
            return index
        split = _best_split(X[rows], y[rows], min_leaf)
        if split is None:
            return index
        feature, threshold, _ = split
        goes_left = X[rows, feature] <= threshold
        left = build(rows[goes_left])
        right = build(rows[~goes_left])
        nodes[index] = {"leaf": False, "counts": nodes[index]["counts"], "feature": feature,
                        "threshold": threshold, "left": left, "right": right}
        return index

    build(np.arange(y.shape[0]))
    return nodes


def _majority(counts: List[int]) -> int:
    return 1 if counts[1] > counts[0] else 0


def _route(nodes: List[Dict[str, Any]], x: np.ndarray) -> Dict[str, Any]:
    node = nodes[0]
    while not node["leaf"]:
        node = nodes[node["left"]] if x[node["feature"]] <= node["threshold"] else nodes[node["right"]]
    return node


def _tree_errors(nodes: List[Dict[str, Any]], X: np.ndarray, y: np.ndarray) -> int:
    return int(sum(_majority(_route(nodes, x)["counts"]) != label for x, label in zip(X, y)))


def _reduced_error_prune(nodes: List[Dict[str, Any]], X: np.ndarray, y: np.ndarray) -> int:
    """Collapse bottom-up every subtree whose leaf replacement is no worse on the holdout."""
    pruned = 0

    def prune(index: int, rows: np.ndarray) -> int:
        nonlocal pruned
        node = nodes[index]
        as_leaf = int(np.sum(y[rows] != _majority(node["counts"])))
        if node["leaf"]:
            return as_leaf
        goes_left = X[rows, node["feature"]] <= node["threshold"]
        subtree = prune(node["left"], rows[goes_left]) + prune(node["right"], rows[~goes_left])
        if as_leaf <= subtree:
            nodes[index] = {"leaf": True, "counts": node["counts"]}
            pruned += 1
            return as_leaf
        return subtree

    prune(0, np.arange(y.shape[0]))
    return pruned


def _compact(nodes: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Drop nodes orphaned by pruning, renumbering in pre-order."""
    out: List[Dict[str, Any]] = []

    def copy(index: int) -> int:
        node = dict(nodes[index])
        position = len(out)
        out.append(node)
        if not node["leaf"]:
            node["left"] = copy(node["left"])
            node["right"] = copy(node["right"])
        return position

    copy(0)
    return out


def stratified_holdout(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Boolean mask holding out about 1/folds of each class."""
    rng = np.random.Generator(np.random.Philox(seed))
    mask = np.zeros(y.shape[0], dtype=bool)
    for c in (0, 1):
        rows = np.flatnonzero(y == c)
        take = int(round(rows.shape[0] / folds))
        if take and take < rows.shape[0]:
            mask[rng.permutation(rows)[:take]] = True
    return mask


def _train_dt(X: np.ndarray, y: np.ndarray, hp: Dict[str, Any]) -> Dict[str, Any]:
    _require_both_classes(y, "DT")
    min_leaf = int(hp["min_leaf"])
    folds = int(hp["pruning_folds"])
    if min_leaf < 1 or folds < 2:
        raise ConfigError("DT needs min_leaf >= 1 and pruning_folds >= 2")
    holdout = stratified_holdout(y, folds, int(hp["seed"]))
    grow = ~holdout
    if np.unique(y[grow]).shape[0] < 2:
        holdout[:] = False
        grow[:] = True
    nodes = _grow(X[grow], y[grow], min_leaf)
    before = after = 0
    pruned = 0
    if holdout.any():
        before = _tree_errors(nodes, X[holdout], y[holdout])
        pruned = _reduced_error_prune(nodes, X[holdout], y[holdout])
        nodes = _compact(nodes)
        after = _tree_errors(nodes, X[holdout], y[holdout])
        if after > before:
            raise NumericalInstability("reduced-error pruning increased holdout error",
                                       before=before, after=after)
    else:
        logger.warning("DT pruning skipped: empty holdout")
    return {"nodes": nodes, "holdout_size": int(holdout.sum()), "pruned_subtrees": pruned,
            "holdout_errors_before": before, "holdout_errors_after": after}


def _score_dt(params: Dict[str, Any], X: np.ndarray) -> np.ndarray:
    nodes = params["nodes"]
    scores = np.empty(X.shape[0])
    for i, x in enumerate(X):
        counts = _route(nodes, x)["counts"]
        scores[i] = (counts[1] + 1.0) / (counts[0] + counts[1] + 2.0)
    return scores


def _dt_labels(params: Dict[str, Any], X: np.ndarray) -> np.ndarray:
    return np.array([_majority(_route(params["nodes"], x)["counts"]) for x in X], dtype=np.int64)


def tree_internal_nodes(model: TrainedModel) -> int:
    return sum(1 for node in model.parameters["nodes"] if not node["leaf"])


# ---------------------------------------------------------------------------
# Uniform contract
# ---------------------------------------------------------------------------

_TRAINERS = {"LR": _train_lr, "KNN": _train_knn, "NB": _train_nb, "DT": _train_dt}


def train(spec: ModelSpec, X: np.ndarray, y: np.ndarray,
          feature_names: Optional[List[str]] = None) -> TrainedModel:
    X, y = _check_training_data(X, y)
    parameters = _TRAINERS[spec.kind](X, y, spec.hyperparameters)
    return TrainedModel(kind=spec.kind, hyperparameters=dict(spec.hyperparameters),
                        n_features=X.shape[1], feature_names=list(feature_names or []),
                        parameters=parameters)


def predict_many(model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Labels (1 = MDD) and MDD scores for every row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ArityMismatch(f"model expects {model.n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("prediction input holds a non-finite value")
    params = model.parameters
    if model.kind == "LR":
        scores = _score_lr(params, X)
    elif model.kind == "KNN":
        scores = _score_knn(params, X, int(model.hyperparameters["k"]))
    elif model.kind == "NB":
        scores = _score_nb(params, X)
    elif model.kind == "DT":
        return _dt_labels(params, X), _score_dt(params, X)
    else:
        raise ConfigError(f"unknown model kind '{model.kind}'")
    # Exact ties fall to NC.
    return (scores > 0.5).astype(np.int64), scores


def predict(model: TrainedModel, x: np.ndarray) -> Tuple[int, float]:
    labels, scores = predict_many(model, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return int(labels[0]), float(scores[0])
