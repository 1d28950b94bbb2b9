import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel
from scipy import stats

from backend.models.config_models import FEATURESET_TAGS, ModelSpec, SelectionSettings
from backend.models.report_models import (
    Confusion,
    CvReport,
    EdgeCensus,
    EpochPrediction,
    FeatureTest,
    FoldResult,
    GridCell,
    GridReport,
    GroupStats,
    Metrics,
)
from backend.models.signal_models import (
    DEFAULT_LAYOUT,
    LABELS,
    POSITIVE_LABEL,
    FeatureMatrix,
    Hemisphere,
    hemisphere_of,
)
from backend.services.classifier_service import predict_many, train
from backend.services.errors import (
    ConfigError,
    DataError,
    EmptyConfusion,
    PipelineError,
    SchemaError,
    TooFewSubjects,
)
from backend.services.selection_service import select_features
from backend.services.signal_service import standardize_apply, standardize_fit
from backend.services.univariate_service import LINEAR_FEATURES

logger = logging.getLogger(__name__)

FEATURESET_DIMENSIONS: Dict[str, int] = {
    "L": 128, "NL": 96, "L+NL": 224, "PLI": 120, "L+PLI": 248, "NL+PLI": 216, "All": 344,
}
_FEATURESET_BLOCKS: Dict[str, Tuple[str, ...]] = {
    "L": ("L",), "NL": ("NL",), "L+NL": ("L", "NL"), "PLI": ("PLI",),
    "L+PLI": ("L", "PLI"), "NL+PLI": ("NL", "PLI"), "All": ("L", "NL", "PLI"),
}


# ---------------------------------------------------------------------------
# Feature sets
# ---------------------------------------------------------------------------

class FeatureSetSpec(BaseModel):
    tag: str
    columns: List[str]

    @property
    def dimension(self) -> int:
        return len(self.columns)


def feature_block(name: str) -> Optional[str]:
    """L, NL or PLI for base feature columns; None for anything else (e.g. per-band PLI)."""
    if name.startswith("pli:"):
        return "PLI"
    if "@" not in name:
        return None
    feature = name.split("@", 1)[0]
    return "L" if feature in LINEAR_FEATURES else "NL"


def resolve_featureset(tag: str, feature_names: Sequence[str]) -> FeatureSetSpec:
    if tag not in _FEATURESET_BLOCKS:
        raise ConfigError(f"unknown feature set '{tag}'", featureset=tag)
    blocks = _FEATURESET_BLOCKS[tag]
    columns = [name for name in feature_names if feature_block(name) in blocks]
    per_block = {b: sum(1 for n in feature_names if feature_block(n) == b) for b in ("L", "NL", "PLI")}
    if per_block == {"L": 128, "NL": 96, "PLI": 120} and len(columns) != FEATURESET_DIMENSIONS[tag]:
        raise SchemaError(f"feature set {tag} resolved to {len(columns)} columns, "
                          f"expected {FEATURESET_DIMENSIONS[tag]}", featureset=tag)
    if not columns:
        raise SchemaError(f"feature table has no columns for feature set {tag}", featureset=tag)
    return FeatureSetSpec(tag=tag, columns=columns)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator > 0 else None


def metrics(tp: int, fn: int, tn: int, fp: int) -> Metrics:
    """Accuracy, sensitivity and specificity; undefined ratios are None."""
    if min(tp, fn, tn, fp) < 0:
        raise DataError("confusion counts must be non-negative")
    total = tp + fn + tn + fp
    if total == 0:
        raise EmptyConfusion("metrics of an empty confusion matrix")
    return Metrics(accuracy=(tp + tn) / total, sensitivity=_ratio(tp, tp + fn),
                   specificity=_ratio(tn, tn + fp))


def confusion_from(labels: Sequence[str], predicted: Sequence[str]) -> Confusion:
    c = Confusion()
    for truth, guess in zip(labels, predicted):
        if truth == POSITIVE_LABEL:
            c.tp += guess == POSITIVE_LABEL
            c.fn += guess != POSITIVE_LABEL
        else:
            c.tn += guess != POSITIVE_LABEL
            c.fp += guess == POSITIVE_LABEL
    return c


def subject_vote_accuracy(predictions: Sequence[EpochPrediction]) -> Optional[float]:
    """Majority vote per subject; a tied vote goes to NC."""
    votes: Dict[str, List[int]] = {}
    truth: Dict[str, str] = {}
    for p in predictions:
        votes.setdefault(p.subject_id, []).append(int(p.predicted == POSITIVE_LABEL))
        truth[p.subject_id] = p.label
    if not votes:
        return None
    correct = 0
    for subject, ballots in votes.items():
        guess = POSITIVE_LABEL if 2 * sum(ballots) > len(ballots) else "NC"
        correct += guess == truth[subject]
    return correct / len(votes)


# ---------------------------------------------------------------------------
# Leave-one-subject-out
# ---------------------------------------------------------------------------

def _check_subjects(table: FeatureMatrix, minimum: int = 2) -> None:
    per_label = {lab: 0 for lab in LABELS}
    for subject in table.subjects:
        per_label[table.labels[table.subject_ids.index(subject)]] += 1
    if min(per_label.values()) < minimum:
        raise TooFewSubjects(f"need at least {minimum} subjects per class, have {per_label}",
                             **{f"subjects_{k}": v for k, v in per_label.items()})


def fit_fold(table: FeatureMatrix, held_out: str, spec: ModelSpec, selection: SelectionSettings,
             selector: str, standardization: str = "zscore", seed: int = 1,
             fixed_selection: Optional[List[str]] = None, keep_model: bool = False) -> FoldResult:
    """Train on every subject but `held_out` and predict the held-out epochs."""
    try:
        groups = table.groups
        train_rows = groups != held_out
        train_table = table.rows(train_rows)
        test_table = table.rows(~train_rows)
        params = standardize_fit(train_table, standardization)
        train_std = standardize_apply(params, train_table)
        test_std = standardize_apply(params, test_table)
        if fixed_selection is None:
            selected = select_features(train_std, selection, seed=seed, method=selector).selected
        else:
            selected = list(fixed_selection)
        if not selected:
            raise DataError("selector kept no features")
        train_sel = train_std.columns(selected)
        model = train(spec, train_sel.values, train_sel.y, feature_names=selected)
        labels, scores = predict_many(model, test_std.columns(selected).values)
    except PipelineError as e:
        raise e.add_context(fold=held_out)
    predictions = [
        EpochPrediction(subject_id=s, epoch_index=i, label=lab,
                        predicted=POSITIVE_LABEL if guess == 1 else "NC", score=float(score))
        for s, i, lab, guess, score in zip(test_table.subject_ids, test_table.epoch_index,
                                            test_table.labels, labels, scores)
    ]
    logger.debug(f"Fold {held_out}: trained on {train_table.n_rows} epochs with {len(selected)} features")
    return FoldResult(held_out=held_out, n_train=train_table.n_rows, n_test=test_table.n_rows,
                      selected=selected, predictions=predictions,
                      model=model if keep_model else None)


def loso_cv(table: FeatureMatrix, featureset: FeatureSetSpec | str, selection: SelectionSettings,
            spec: ModelSpec, selector: Optional[str] = None, standardization: str = "zscore",
            seed: int = 1, workers: int = 1, save_models: bool = False,
            digest: Optional[str] = None) -> CvReport:
    """Leave-one-subject-out evaluation of one (feature set, selector, model) combination."""
    if isinstance(featureset, str):
        featureset = resolve_featureset(featureset, table.feature_names)
    selector = selector or selection.method
    _check_subjects(table)
    data = table.columns(featureset.columns)

    fixed = None
    if selection.scope == "global" and selector != "none":
        params = standardize_fit(data, standardization)
        fixed = select_features(standardize_apply(params, data), selection, seed=seed,
                                method=selector).selected

    subjects = data.subjects
    folds = Parallel(n_jobs=workers)(
        delayed(fit_fold)(data, s, spec, selection, selector, standardization, seed, fixed, save_models)
        for s in subjects
    )
    predictions = [p for fold in folds for p in fold.predictions]
    confusion = confusion_from([p.label for p in predictions], [p.predicted for p in predictions])
    census: Dict[str, int] = {}
    for fold in folds:
        for name in fold.selected:
            census[name] = census.get(name, 0) + 1
    census = dict(sorted(census.items(), key=lambda item: (-item[1], item[0])))
    frequent = [name for name, count in census.items() if 2 * count >= len(folds) and name.startswith("pli:")]
    report = CvReport(
        featureset=featureset.tag,
        selector=selector,
        model=spec.kind,
        n_features=featureset.dimension,
        folds=folds,
        confusion=confusion,
        metrics=metrics(confusion.tp, confusion.fn, confusion.tn, confusion.fp),
        subject_accuracy=subject_vote_accuracy(predictions),
        feature_census=census,
        mean_selected=float(np.mean([len(f.selected) for f in folds])),
        selection_scope=selection.scope,
        edge_census=edge_census(frequent),
        config_digest=digest,
    )
    logger.info(
        f"LOSO {featureset.tag}/{selector}/{spec.kind}: accuracy={report.metrics.accuracy:.4f} "
        f"over {len(folds)} folds"
    )
    return report


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

def _run_cell(table: FeatureMatrix, tag: str, selector: str, spec: ModelSpec,
              selection: SelectionSettings, standardization: str, seed: int) -> GridCell:
    try:
        report = loso_cv(table, tag, selection, spec, selector=selector,
                         standardization=standardization, seed=seed)
        return GridCell(featureset=tag, selector=selector, model=spec.kind, report=report.summary())
    except PipelineError as e:
        e.add_context(featureset=tag, selector=selector, model=spec.kind)
        logger.warning(f"Grid cell {tag}/{selector}/{spec.kind} failed: {e}")
        return GridCell(featureset=tag, selector=selector, model=spec.kind, error=e.to_dict())


def _mean_sd(values: List[float]) -> Dict[str, Optional[float]]:
    if not values:
        return {"mean": None, "sd": None, "n": 0}
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return {"mean": float(np.mean(values)), "sd": sd, "n": len(values)}


def grid_evaluate(table: FeatureMatrix, featuresets: Sequence[str], selectors: Sequence[str],
                  models: Sequence[ModelSpec], selection: SelectionSettings,
                  standardization: str = "zscore", seed: int = 1, workers: int = 1,
                  digest: Optional[str] = None) -> GridReport:
    """LOSO over every (feature set, selector, model) cell; failed cells are recorded."""
    unknown = [t for t in featuresets if t not in FEATURESET_TAGS]
    if unknown:
        raise ConfigError(f"unknown feature sets {unknown}")
    work = [(tag, selector, spec) for tag in featuresets for selector in selectors for spec in models]
    logger.info(f"Evaluating grid of {len(work)} cells with {workers} worker(s)")
    cells: List[GridCell] = Parallel(n_jobs=workers)(
        delayed(_run_cell)(table, tag, selector, spec, selection, standardization, seed)
        for tag, selector, spec in work
    )

    table_summary: Dict[str, Dict[str, Dict[str, Optional[float]]]] = {}
    lengths: Dict[str, Dict[str, Optional[float]]] = {}
    for tag in featuresets:
        table_summary[tag] = {}
        lengths[tag] = {}
        for selector in selectors:
            group = [c for c in cells if c.featureset == tag and c.selector == selector and c.report]
            table_summary[tag][selector] = _mean_sd([c.accuracy for c in group if c.accuracy is not None])
            lengths[tag][selector] = (float(np.mean([c.report["mean_selected"] for c in group]))
                                      if group else None)
    per_classifier: Dict[str, Dict[str, Optional[float]]] = {}
    for selector in selectors:
        per_classifier[selector] = {}
        for spec in models:
            accs = [c.accuracy for c in cells
                    if c.selector == selector and c.model == spec.kind and c.accuracy is not None]
            per_classifier[selector][spec.kind] = float(np.mean(accs)) if accs else None

    failed = sum(1 for c in cells if c.error is not None)
    if failed:
        logger.warning(f"{failed} of {len(cells)} grid cells failed")
    return GridReport(featuresets=list(featuresets), selectors=list(selectors),
                      models=[m.kind for m in models], cells=cells, table=table_summary,
                      per_classifier=per_classifier, feature_lengths=lengths,
                      failed_cells=failed, config_digest=digest)


def grid_frame(report: GridReport) -> pd.DataFrame:
    """Rows = feature sets, columns = selectors, cells = `mean ± sd` over models."""
    rows = []
    for tag in report.featuresets:
        row: Dict[str, Any] = {"featureset": tag}
        for selector in report.selectors:
            cell = report.table[tag][selector]
            row[selector] = ("" if cell["mean"] is None
                             else f"{cell['mean']:.4f} ± {cell['sd']:.4f}")
        rows.append(row)
    return pd.DataFrame(rows, columns=["featureset"] + list(report.selectors))


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def welch_t(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """Two-sided Welch t-test; zero-variance groups give t = 0/p = 1 or |t| = inf/p = 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.var(a) == 0 and np.var(b) == 0:
        diff = a.mean() - b.mean()
        if diff == 0:
            return 0.0, 1.0
        return float(np.sign(diff) * np.inf), 0.0
    result = stats.ttest_ind(a, b, equal_var=False)
    return float(result.statistic), float(result.pvalue)


def group_ttest(table: FeatureMatrix, alpha: float = 0.05, divisor: Optional[int] = None,
                level: str = "subject") -> GroupStats:
    """Per-feature Welch t-test between MDD and NC with a Bonferroni threshold alpha / divisor."""
    _check_subjects(table)
    frame = table.to_frame()
    if level == "subject":
        grouped = frame.drop(columns=["epoch_index"]).groupby(["subject_id", "label"], sort=True).mean()
        units = grouped.reset_index()
    elif level == "epoch":
        units = frame
    else:
        raise ConfigError(f"unknown statistics level '{level}'")
    divisor = divisor or table.n_features
    if divisor < 1:
        raise ConfigError("Bonferroni divisor must be >= 1")
    threshold = alpha / divisor
    mdd = units[units["label"] == POSITIVE_LABEL]
    nc = units[units["label"] != POSITIVE_LABEL]
    tests = []
    for name in table.feature_names:
        a = np.sort(mdd[name].to_numpy(dtype=np.float64))
        b = np.sort(nc[name].to_numpy(dtype=np.float64))
        t, p = welch_t(a, b)
        tests.append(FeatureTest(feature=name, t=t, p=p, significant=p < threshold,
                                 mean_mdd=float(a.mean()), mean_nc=float(b.mean())))
    result = GroupStats(level=level, alpha=alpha, divisor=divisor, threshold=threshold, tests=tests)
    logger.info(f"Group t-tests: {len(result.significant)} of {len(tests)} features below p={threshold:.3g}")
    return result


def stats_frame(result: GroupStats) -> pd.DataFrame:
    return pd.DataFrame([{"feature": t.feature, "t": t.t, "p": t.p, "significant": t.significant,
                          "mean_MDD": t.mean_mdd, "mean_NC": t.mean_nc} for t in result.tests],
                        columns=["feature", "t", "p", "significant", "mean_MDD", "mean_NC"])


def parse_edge_name(name: str) -> Tuple[str, str]:
    """`pli:C3-P3`, `T3-C3` or `FP1-t4` to canonical (A, B) with A first in channel order."""
    body = name.split(":", 1)[-1]
    parts = body.split("-")
    if len(parts) != 2:
        raise SchemaError(f"edge '{name}' must look like 'A-B'", edge=name)
    a, b = (DEFAULT_LAYOUT.canonical_name(p) for p in parts)
    if DEFAULT_LAYOUT.index(a) > DEFAULT_LAYOUT.index(b):
        a, b = b, a
    return a, b


def edge_census(edges: Sequence[str]) -> EdgeCensus:
    census = EdgeCensus()
    seen = set()
    for name in edges:
        a, b = parse_edge_name(name)
        if (a, b) in seen:
            continue
        seen.add((a, b))
        edge = f"{a}-{b}"
        side_a, side_b = hemisphere_of(a), hemisphere_of(b)
        if side_a != side_b:
            census.inter.append(edge)
        elif side_a == Hemisphere.LEFT:
            census.intra_left.append(edge)
        else:
            census.intra_right.append(edge)
    return census
