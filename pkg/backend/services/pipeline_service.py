import logging
import os
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed
from pydantic import ValidationError

from backend.models.config_models import PipelineConfig
from backend.models.signal_models import CHANNELS, LABELS, Dataset, Epoch, FeatureMatrix
from backend.services.connectivity_service import extract_pli, reassemble
from backend.services.dataset_service import (
    load_dataset,
    load_features_csv,
    synth_dataset,
    write_dataset,
    write_features,
)
from backend.services.errors import ConfigError, DataError, PipelineError
from backend.services.evaluation_service import (
    edge_census,
    grid_evaluate,
    grid_frame,
    group_ttest,
    loso_cv,
    resolve_featureset,
    stats_frame,
)
from backend.services.export_service import ExportService, config_digest
from backend.services.selection_service import select_features
from backend.services.signal_service import filter_epoch, standardize_apply, standardize_fit
from backend.services.univariate_service import extract_univariate

logger = logging.getLogger(__name__)

COMMANDS = ("synth", "extract", "select", "eval", "grid", "stats", "run")

DATASET_FILE = "dataset.csv"
FEATURES_FILE = "features.csv"


def load_config(path: Optional[str]) -> PipelineConfig:
    """Read a JSON run configuration; a missing path means all defaults."""
    if not path:
        return PipelineConfig()
    if not os.path.exists(path):
        raise ConfigError(f"config file '{path}' does not exist", path=path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_config(text)


def parse_config(text: str | Dict[str, Any]) -> PipelineConfig:
    try:
        if isinstance(text, dict):
            return PipelineConfig.model_validate(text)
        return PipelineConfig.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ()))
        raise ConfigError(f"invalid configuration: {first.get('msg')}", field=location or "<root>")


def epoch_features(epoch: Epoch, config: PipelineConfig) -> Dict[str, float]:
    """Every configured feature block of one epoch, in column order."""
    if config.filter.enabled:
        epoch = filter_epoch(epoch, config.filter.lo, config.filter.hi, config.filter.taps)
    blocks = config.features.blocks
    values: Dict[str, float] = {}
    if "linear" in blocks or "nonlinear" in blocks:
        univariate = extract_univariate(epoch, config.features)
        if "linear" in blocks:
            values.update(univariate.linear)
        if "nonlinear" in blocks:
            values.update(univariate.nonlinear)
    if "pli" in blocks:
        values.update(extract_pli(epoch, config.features.pli_edge_trim, config.features.pli_bands))
    return values


def extract_features(dataset: Dataset, config: PipelineConfig, workers: int = 1) -> FeatureMatrix:
    if not dataset.epochs:
        raise DataError("dataset holds no epochs")
    rows: List[Dict[str, float]] = Parallel(n_jobs=workers)(
        delayed(epoch_features)(epoch, config) for epoch in dataset.epochs
    )
    names = list(rows[0])
    features = FeatureMatrix(
        values=np.array([[row[n] for n in names] for row in rows], dtype=np.float64),
        feature_names=names,
        subject_ids=[e.subject_id for e in dataset.epochs],
        labels=[e.label for e in dataset.epochs],
        epoch_index=[e.epoch_index for e in dataset.epochs],
    )
    logger.info(f"Extracted {features.n_features} features for {features.n_rows} epochs")
    return features


class PipelineService:
    """Runs pipeline stages against one configuration and one output directory."""

    def __init__(self, config: PipelineConfig, input_path: Optional[str] = None):
        self.config = config
        self.input_path = input_path
        self.digest = config_digest(config)
        self.export = ExportService(config.output_dir)

    @property
    def workers(self) -> int:
        return self.config.workers

    def _dataset(self) -> Dataset:
        path = self.input_path or self.config.dataset.path
        if path:
            return load_dataset(path)
        cached = self.export.path(DATASET_FILE)
        if os.path.exists(cached):
            return load_dataset(cached)
        return synth_dataset(self.config.synth_config())

    def _features(self) -> FeatureMatrix:
        path = self.input_path or self.export.path(FEATURES_FILE)
        if not os.path.exists(path):
            raise DataError(f"feature file '{path}' not found; run extract first", path=path)
        return load_features_csv(path)

    # -- commands ---------------------------------------------------------

    def synth(self) -> List[str]:
        if self.config.dataset.path:
            raise ConfigError("synth needs a synthetic dataset source, the config names a file")
        dataset = synth_dataset(self.config.synth_config())
        return [write_dataset(dataset, self.export.path(DATASET_FILE), self.digest)]

    def extract(self) -> List[str]:
        dataset = self._dataset()
        logger.info(f"Dataset: {dataset.summary()['subjects']} subjects, {len(dataset.epochs)} epochs")
        features = extract_features(dataset, self.config, self.workers)
        return [write_features(features, self.export.path(FEATURES_FILE), self.digest)]

    def select(self) -> List[str]:
        table = self._features()
        featureset = resolve_featureset(self.config.evaluation.featureset, table.feature_names)
        data = table.columns(featureset.columns)
        params = standardize_fit(data, self.config.evaluation.standardization)
        result = select_features(standardize_apply(params, data), self.config.selection, seed=self.config.seed)
        payload = {**result.summary(), "featureset": featureset.tag}
        return [self.export.write_json("selection.json", "selection", payload, self.digest)]

    def eval(self) -> List[str]:
        table = self._features()
        evaluation = self.config.evaluation
        reports = [
            loso_cv(table, evaluation.featureset, self.config.selection, spec,
                    standardization=evaluation.standardization, seed=self.config.seed,
                    workers=self.workers, save_models=evaluation.save_models, digest=self.digest)
            for spec in self.config.models
        ]
        payload = {"reports": [
            {**r.model_dump(mode="json"),
             "edge_census": r.edge_census.summary() if r.edge_census else None}
            for r in reports
        ]}
        return [self.export.write_json("cv_report.json", "cv_report", payload, self.digest)]

    def grid(self) -> List[str]:
        table = self._features()
        evaluation = self.config.evaluation
        report = grid_evaluate(table, evaluation.featuresets, evaluation.selectors, self.config.models,
                               self.config.selection, evaluation.standardization,
                               seed=self.config.seed, workers=self.workers, digest=self.digest)
        return [
            self.export.write_frame("grid.csv", "grid", grid_frame(report), self.digest),
            self.export.write_json("grid.json", "grid", report, self.digest),
        ]

    def stats(self) -> List[str]:
        table = self._features()
        evaluation = self.config.evaluation
        featureset = resolve_featureset(evaluation.featureset, table.feature_names)
        data = table.columns(featureset.columns)
        result = group_ttest(data, evaluation.alpha, evaluation.bonferroni_divisor, evaluation.stats_level)
        significant_edges = [n for n in result.significant if n.startswith("pli:")]
        census = edge_census(significant_edges)
        outputs = [
            self.export.write_frame("group_stats.csv", "group_stats", stats_frame(result), self.digest),
            self.export.write_json("edge_census.json", "edge_census",
                                   {"edges": significant_edges, **census.summary(),
                                    "level": result.level, "threshold": result.threshold}, self.digest),
        ]
        outputs += self._class_connectivity(table)
        return outputs

    def _class_connectivity(self, table: FeatureMatrix) -> List[str]:
        """Subject-averaged PLI matrix per class."""
        edges = [n for n in table.feature_names if n.startswith("pli:")]
        if len(edges) != len(CHANNELS) * (len(CHANNELS) - 1) // 2:
            return []
        frame = table.columns(edges).to_frame().drop(columns=["epoch_index"])
        subject_means = frame.groupby(["subject_id", "label"], sort=True).mean().reset_index()
        outputs = []
        for label in LABELS:
            rows = subject_means[subject_means["label"] == label]
            if rows.empty:
                continue
            matrix = reassemble(rows[edges].mean(axis=0).to_numpy())
            outputs.append(self.export.write_connectivity(f"connectivity_mean_{label}.csv", matrix.values,
                                                          list(CHANNELS), self.digest))
        return outputs

    def run(self) -> List[str]:
        """Full pipeline: dataset, features, selection, evaluation, statistics (and grid in grid mode)."""
        outputs: List[str] = []
        if not self.config.dataset.path and not self.input_path:
            outputs += self.synth()
        outputs += self.extract()
        saved_input, self.input_path = self.input_path, None
        try:
            outputs += self.select()
            outputs += self.eval()
            if self.config.evaluation.mode == "grid":
                outputs += self.grid()
            outputs += self.stats()
        finally:
            self.input_path = saved_input
        return outputs

    def execute(self, command: str) -> List[str]:
        handlers: Dict[str, Callable[[], List[str]]] = {
            "synth": self.synth, "extract": self.extract, "select": self.select, "eval": self.eval,
            "grid": self.grid, "stats": self.stats, "run": self.run,
        }
        if command not in handlers:
            raise ConfigError(f"unknown command '{command}'", command=command)
        logger.info(f"Running '{command}' into {self.config.output_dir} (digest {self.digest[:12]})")
        try:
            outputs = handlers[command]()
        except PipelineError as e:
            raise e.add_context(operation=command)
        logger.info(f"'{command}' wrote {len(outputs)} file(s)")
        return outputs
