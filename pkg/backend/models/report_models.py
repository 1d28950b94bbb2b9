from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from backend.services.classifier_service import TrainedModel


class Confusion(BaseModel):
    """Pooled counts with MDD as the positive class."""
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp


class Metrics(BaseModel):
    """None marks a ratio whose denominator is zero."""
    accuracy: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]


class EpochPrediction(BaseModel):
    subject_id: str
    epoch_index: int
    label: str
    predicted: str
    score: float


class FoldResult(BaseModel):
    held_out: str
    n_train: int
    n_test: int
    selected: List[str]
    predictions: List[EpochPrediction]
    model: Optional[TrainedModel] = None


class EdgeCensus(BaseModel):
    intra_left: List[str] = Field(default_factory=list)
    intra_right: List[str] = Field(default_factory=list)
    inter: List[str] = Field(default_factory=list)

    @property
    def counts(self) -> Dict[str, int]:
        return {"intra_left": len(self.intra_left), "intra_right": len(self.intra_right),
                "inter": len(self.inter)}

    def summary(self) -> Dict[str, Any]:
        return {**self.model_dump(), "counts": self.counts}


class CvReport(BaseModel):
    featureset: str
    selector: str
    model: str
    n_features: int
    folds: List[FoldResult]
    confusion: Confusion
    metrics: Metrics
    subject_accuracy: Optional[float]
    feature_census: Dict[str, int] = Field(default_factory=dict)
    mean_selected: float = 0.0
    selection_scope: str = "fold"
    edge_census: Optional[EdgeCensus] = None
    config_digest: Optional[str] = None

    def summary(self) -> Dict[str, Any]:
        """The report without per-epoch predictions."""
        return {
            "featureset": self.featureset,
            "selector": self.selector,
            "model": self.model,
            "n_features": self.n_features,
            "n_folds": len(self.folds),
            "confusion": self.confusion.model_dump(),
            "metrics": self.metrics.model_dump(),
            "subject_accuracy": self.subject_accuracy,
            "mean_selected": self.mean_selected,
        }


class GridCell(BaseModel):
    featureset: str
    selector: str
    model: str
    report: Optional[Dict[str, Any]] = None
    error: Optional[Dict[str, Any]] = None

    @property
    def accuracy(self) -> Optional[float]:
        if self.report is None:
            return None
        return self.report["metrics"]["accuracy"]


class GridReport(BaseModel):
    featuresets: List[str]
    selectors: List[str]
    models: List[str]
    cells: List[GridCell]
    table: Dict[str, Dict[str, Dict[str, Optional[float]]]]
    per_classifier: Dict[str, Dict[str, Optional[float]]]
    feature_lengths: Dict[str, Dict[str, Optional[float]]]
    failed_cells: int = 0
    config_digest: Optional[str] = None


class FeatureTest(BaseModel):
    feature: str
    t: float
    p: float
    significant: bool
    mean_mdd: float
    mean_nc: float


class GroupStats(BaseModel):
    level: str
    alpha: float
    divisor: int
    threshold: float
    tests: List[FeatureTest]

    @property
    def significant(self) -> List[str]:
        return [t.feature for t in self.tests if t.significant]
