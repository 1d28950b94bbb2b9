import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist

from backend.models.config_models import SelectionSettings
from backend.models.signal_models import LabeledTable
from backend.services.errors import (
    ConfigError,
    DataError,
    InvalidDistribution,
    LengthMismatch,
    MissingCorrelation,
    TooFewInstances,
)

logger = logging.getLogger(__name__)


class RankedFeature(BaseModel):
    name: str
    score: float


class SelectionResult(BaseModel):
    """Ranked features of one selector run and the subset passed on to training."""
    method: str
    ranked: List[RankedFeature]
    selected: List[str]
    config: Dict[str, Any] = Field(default_factory=dict)
    merit_trace: List[float] = Field(default_factory=list)

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    @property
    def scores(self) -> Dict[str, float]:
        return {r.name: r.score for r in self.ranked}

    def summary(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "n_selected": self.n_selected,
            "selected": list(self.selected),
            "ranked": [r.model_dump() for r in self.ranked],
            "config": self.config,
            "merit_trace": list(self.merit_trace),
        }


def _rank(scores: Dict[str, float]) -> List[RankedFeature]:
    """Descending score, ascending name on ties."""
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return [RankedFeature(name=name, score=float(score)) for name, score in ordered]


# ---------------------------------------------------------------------------
# Entropy kernels (bits)
# ---------------------------------------------------------------------------

def _check_distribution(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistribution("probabilities must be non-negative and sum to 1")
    return p


def _h(p: np.ndarray) -> float:
    p = np.sort(p[p > 0])
    return float(-np.sum(p * np.log2(p)))


def entropy(p: Sequence[float]) -> float:
    """H = -sum p log2 p, with 0 log 0 = 0."""
    return _h(_check_distribution(np.asarray(p, dtype=np.float64).ravel()))


def cond_entropy(joint: np.ndarray) -> float:
    """H(Y|X) for a joint table p(x, y) with x along rows."""
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2:
        raise InvalidDistribution("joint distribution must be a 2-D table")
    _check_distribution(joint.ravel())
    total = 0.0
    for p_x, row in zip(joint.sum(axis=1), joint):
        if p_x > 0:
            total += p_x * _h(row / p_x)
    return float(total)


def _codes(x: Sequence) -> np.ndarray:
    return np.unique(np.asarray(x), return_inverse=True)[1].ravel()


def _entropy_of_codes(codes: np.ndarray) -> float:
    return _h(np.bincount(codes) / codes.shape[0])


def _joint_entropy(a: np.ndarray, b: np.ndarray) -> float:
    joint = a.astype(np.int64) * (int(b.max()) + 1) + b
    return _entropy_of_codes(_codes(joint))


def _pair(x: Sequence, y: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    if len(x) != len(y):
        raise LengthMismatch(f"columns have {len(x)} and {len(y)} rows")
    if len(x) == 0:
        raise DataError("symmetrical uncertainty of empty columns")
    return _codes(x), _codes(y)


def symmetrical_uncertainty(x: Sequence, y: Sequence) -> float:
    """2 * gain / (H(X) + H(Y)) for discrete columns; 0 when both are constant."""
    a, b = _pair(x, y)
    hx, hy = _entropy_of_codes(a), _entropy_of_codes(b)
    denominator = hx + hy
    if denominator == 0:
        return 0.0
    gain = denominator - _joint_entropy(a, b)
    return float(min(max(2.0 * gain / denominator, 0.0), 1.0))


def info_gain(attribute: Sequence, labels: Sequence) -> float:
    """IG(C, A) = H(C) - H(C|A), computed as H(C) + H(A) - H(A, C)."""
    a, c = _pair(attribute, labels)
    gain = _entropy_of_codes(c) + _entropy_of_codes(a) - _joint_entropy(a, c)
    return float(max(gain, 0.0))


# ---------------------------------------------------------------------------
# Supervised MDL discretization
# ---------------------------------------------------------------------------

def _counts_entropy(counts: np.ndarray) -> np.ndarray:
    """Row-wise entropy (bits) of class-count rows."""
    totals = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, totals, out=np.zeros_like(counts, dtype=np.float64), where=totals > 0)
    logs = np.log2(p, out=np.zeros_like(p), where=p > 0)
    return -np.sum(p * logs, axis=-1)


def mdl_discretize(column: Sequence[float], labels: Sequence) -> List[float]:
    """Recursive entropy-minimizing cut points accepted by the MDL stopping rule."""
    x = np.asarray(column, dtype=np.float64).ravel()
    y = _codes(labels)
    if x.shape[0] != y.shape[0]:
        raise LengthMismatch(f"column has {x.shape[0]} rows, labels {y.shape[0]}")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    onehot = np.eye(int(y.max()) + 1 if y.size else 1)[y]
    cuts: List[float] = []

    def split(lo: int, hi: int) -> None:
        n = hi - lo
        if n < 2:
            return
        block = onehot[lo:hi]
        total = block.sum(axis=0)
        # Candidate boundaries lie between distinct consecutive values.
        candidates = np.flatnonzero(x[lo + 1:hi] > x[lo:hi - 1]) + 1
        if candidates.size == 0:
            return
        left = np.cumsum(block, axis=0)[candidates - 1]
        right = total - left
        n_left = candidates.astype(np.float64)
        h_left = _counts_entropy(left)
        h_right = _counts_entropy(right)
        weighted = (n_left * h_left + (n - n_left) * h_right) / n
        best = int(np.argmin(weighted))
        h_all = float(_counts_entropy(total[None, :])[0])
        gain = h_all - weighted[best]
        k = int(np.count_nonzero(total))
        k1 = int(np.count_nonzero(left[best]))
        k2 = int(np.count_nonzero(right[best]))
        delta = math.log2(3 ** k - 2) - (k * h_all - k1 * h_left[best] - k2 * h_right[best])
        if gain <= (math.log2(n - 1) + delta) / n:
            return
        at = lo + int(candidates[best])
        cuts.append(float((x[at - 1] + x[at]) / 2.0))
        split(lo, at)
        split(at, hi)

    split(0, x.shape[0])
    return sorted(cuts)


def discretize(column: Sequence[float], cuts: Sequence[float]) -> np.ndarray:
    return np.searchsorted(np.asarray(cuts, dtype=np.float64), np.asarray(column, dtype=np.float64),
                           side="right")


def discretize_table(t: LabeledTable) -> Dict[str, np.ndarray]:
    labels = t.y
    return {name: discretize(t.values[:, i], mdl_discretize(t.values[:, i], labels))
            for i, name in enumerate(t.feature_names)}


# ---------------------------------------------------------------------------
# Information Gain ranking
# ---------------------------------------------------------------------------

def _top_n(ranked: List[RankedFeature], n_select: int) -> List[str]:
    return [r.name for r in ranked[:max(0, n_select)]]


def info_gain_rank(t: LabeledTable, n_select: int = 18) -> SelectionResult:
    labels = t.y
    codes = discretize_table(t)
    scores = {name: info_gain(codes[name], labels) for name in t.feature_names}
    ranked = _rank(scores)
    return SelectionResult(method="infogain", ranked=ranked, selected=_top_n(ranked, n_select),
                           config={"n_select": n_select, "discretization": "mdl"})


# ---------------------------------------------------------------------------
# ReliefF
# ---------------------------------------------------------------------------

def _nearest(distances: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """k closest candidates by (distance, row index)."""
    order = np.lexsort((candidates, distances[candidates]))
    return candidates[order[:k]]


def relieff_weights(X: np.ndarray, y: np.ndarray, k: int = 10, m: Optional[int] = None,
                    seed: int = 1) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    classes, counts = np.unique(y, return_counts=True)
    if k < 1:
        raise ConfigError(f"ReliefF needs k >= 1, got {k}")
    if classes.shape[0] < 2 or np.any(counts <= k):
        raise TooFewInstances(f"every class needs more than k={k} instances",
                              counts={str(c): int(v) for c, v in zip(classes, counts)})
    priors = dict(zip(classes.tolist(), (counts / n).tolist()))

    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    normalized = np.divide(X - lo, span, out=np.zeros_like(X), where=span > 0)
    distances = cdist(normalized, normalized, metric="euclidean")

    if m is None:
        sampled = np.arange(n)
    else:
        if not 1 <= m <= n:
            raise ConfigError(f"ReliefF sample count m={m} outside [1, {n}]")
        rng = np.random.Generator(np.random.Philox(seed))
        sampled = np.sort(rng.choice(n, size=m, replace=False))
    n_sampled = sampled.shape[0]

    rows = np.arange(n)
    weights = np.zeros(X.shape[1])
    for i in sampled:
        others = rows[rows != i]
        same = others[y[others] == y[i]]
        hits = _nearest(distances[i], same, k)
        weights -= np.abs(normalized[hits] - normalized[i]).sum(axis=0) / (n_sampled * k)
        for c in classes:
            if c == y[i]:
                continue
            pool = others[y[others] == c]
            misses = _nearest(distances[i], pool, k)
            factor = priors[c] / (1.0 - priors[y[i]])
            weights += factor * np.abs(normalized[misses] - normalized[i]).sum(axis=0) / (n_sampled * k)
    return weights


def relieff_rank(t: LabeledTable, k: int = 10, m: Optional[int] = None, seed: int = 1,
                 n_select: int = 18) -> SelectionResult:
    weights = relieff_weights(t.values, t.y, k=k, m=m, seed=seed)
    ranked = _rank(dict(zip(t.feature_names, weights.tolist())))
    return SelectionResult(method="relieff", ranked=ranked, selected=_top_n(ranked, n_select),
                           config={"n_select": n_select, "k": k, "m": m, "seed": seed})


# ---------------------------------------------------------------------------
# CFS
# ---------------------------------------------------------------------------

class SuCache:
    """Symmetrical uncertainties for CFS, computed lazily from discretized codes.

    Values can also be preloaded; a pair that is neither preloaded nor computable
    raises MissingCorrelation.
    """

    def __init__(self, codes: Optional[Dict[str, np.ndarray]] = None,
                 class_codes: Optional[np.ndarray] = None,
                 class_su: Optional[Dict[str, float]] = None,
                 pair_su: Optional[Dict[Tuple[str, str], float]] = None):
        self.codes = codes or {}
        self.class_codes = class_codes
        self._class: Dict[str, float] = dict(class_su or {})
        self._pairs: Dict[Tuple[str, str], float] = {
            tuple(sorted(key)): value for key, value in (pair_su or {}).items()
        }

    @classmethod
    def from_table(cls, t: LabeledTable) -> "SuCache":
        return cls(codes=discretize_table(t), class_codes=t.y)

    @property
    def names(self) -> List[str]:
        return sorted(set(self.codes) | set(self._class))

    def class_su(self, name: str) -> float:
        if name not in self._class:
            if name not in self.codes or self.class_codes is None:
                raise MissingCorrelation(f"no feature-class correlation for '{name}'", feature=name)
            self._class[name] = symmetrical_uncertainty(self.codes[name], self.class_codes)
        return self._class[name]

    def pair_su(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        if key not in self._pairs:
            if a not in self.codes or b not in self.codes:
                raise MissingCorrelation(f"no correlation for pair '{a}'/'{b}'", pair=f"{a}|{b}")
            self._pairs[key] = symmetrical_uncertainty(self.codes[a], self.codes[b])
        return self._pairs[key]


def _merit(k: int, sum_cf: float, sum_ff: float) -> float:
    if k == 0:
        return 0.0
    r_cf = sum_cf / k
    r_ff = sum_ff / (k * (k - 1) / 2) if k > 1 else 0.0
    return float(k * r_cf / math.sqrt(k + k * (k - 1) * r_ff))


def cfs_merit(subset: Sequence[str], su_cache: SuCache) -> float:
    """k * mean feature-class SU / sqrt(k + k(k-1) * mean feature-feature SU)."""
    subset = list(subset)
    if not subset:
        raise DataError("CFS merit of an empty subset")
    sum_cf = sum(su_cache.class_su(f) for f in subset)
    sum_ff = sum(su_cache.pair_su(a, b) for i, a in enumerate(subset) for b in subset[i + 1:])
    return _merit(len(subset), sum_cf, sum_ff)


def greedy_stepwise(candidates: Iterable[str], su_cache: SuCache
                    ) -> Tuple[List[str], Dict[str, float], List[float]]:
    """Forward greedy search followed by a remove/add sweep.

    Every accepted move strictly raises the merit. Returns the subset, the merit
    at which each member was added, and the merit trace.
    """
    pool = sorted(candidates)
    subset: List[str] = []
    added_at: Dict[str, float] = {}
    trace: List[float] = []
    current = 0.0
    sum_cf = 0.0
    sum_ff = 0.0

    def best_addition() -> Tuple[Optional[str], float, float, float]:
        best_name, best_merit, best_cf, best_ff = None, current, 0.0, 0.0
        for name in pool:
            if name in added_at:
                continue
            cf = sum_cf + su_cache.class_su(name)
            ff = sum_ff + sum(su_cache.pair_su(name, member) for member in subset)
            merit = _merit(len(subset) + 1, cf, ff)
            if merit > best_merit:
                best_name, best_merit, best_cf, best_ff = name, merit, cf, ff
        return best_name, best_merit, best_cf, best_ff

    def best_removal() -> Tuple[Optional[str], float]:
        best_name, best_merit = None, current
        if len(subset) < 2:
            return None, current
        for name in sorted(subset):
            merit = cfs_merit([f for f in subset if f != name], su_cache)
            if merit > best_merit:
                best_name, best_merit = name, merit
        return best_name, best_merit

    def recompute_sums() -> Tuple[float, float]:
        cf = sum(su_cache.class_su(f) for f in subset)
        ff = sum(su_cache.pair_su(a, b) for i, a in enumerate(subset) for b in subset[i + 1:])
        return cf, ff

    while True:
        name, merit, cf, ff = best_addition()
        if name is None:
            break
        subset.append(name)
        added_at[name] = merit
        trace.append(merit)
        current, sum_cf, sum_ff = merit, cf, ff

    improved = True
    while improved:
        improved = False
        name, merit = best_removal()
        if name is not None:
            subset.remove(name)
            del added_at[name]
            trace.append(merit)
            current = merit
            sum_cf, sum_ff = recompute_sums()
            improved = True
        name, merit, cf, ff = best_addition()
        if name is not None:
            subset.append(name)
            added_at[name] = merit
            trace.append(merit)
            current, sum_cf, sum_ff = merit, cf, ff
            improved = True
    return subset, added_at, trace


def cfs_greedy_stepwise(t: LabeledTable, su_cache: Optional[SuCache] = None) -> SelectionResult:
    cache = su_cache or SuCache.from_table(t)
    subset, added_at, trace = greedy_stepwise(t.feature_names, cache)
    ranked = _rank(added_at)
    logger.debug(f"CFS kept {len(subset)} of {t.n_features} features, merit {trace[-1] if trace else 0.0:.4f}")
    return SelectionResult(method="cfs", ranked=ranked, selected=[r.name for r in ranked],
                           config={"search": "greedy_stepwise", "discretization": "mdl"},
                           merit_trace=trace)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def no_selection(t: LabeledTable) -> SelectionResult:
    ranked = _rank({name: 0.0 for name in t.feature_names})
    return SelectionResult(method="none", ranked=ranked, selected=list(t.feature_names))


def select_features(t: LabeledTable, settings: SelectionSettings, seed: int = 1,
                    method: Optional[str] = None) -> SelectionResult:
    method = method or settings.method
    if method == "none":
        return no_selection(t)
    if method == "infogain":
        return info_gain_rank(t, settings.n_select)
    if method == "relieff":
        return relieff_rank(t, k=settings.relieff_k, m=settings.relieff_m, seed=seed,
                            n_select=settings.n_select)
    if method == "cfs":
        return cfs_greedy_stepwise(t)
    raise ConfigError(f"unknown selector '{method}'")
