import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from backend import settings
from backend.models.signal_models import CHANNELS, LABELS
from backend.services.errors import ConfigError

FeatureSetTag = Literal["L", "NL", "L+NL", "PLI", "L+PLI", "NL+PLI", "All"]
SelectorName = Literal["none", "cfs", "infogain", "relieff"]
ModelKind = Literal["LR", "KNN", "DT", "NB"]

FEATURESET_TAGS: List[str] = ["L", "NL", "L+NL", "PLI", "L+PLI", "NL+PLI", "All"]
SELECTOR_NAMES: List[str] = ["none", "cfs", "infogain", "relieff"]
MODEL_KINDS: List[str] = ["KNN", "NB", "DT", "LR"]

# Defaults follow the classifier table of the reference toolchain.
MODEL_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "LR": {"ridge": 1.0e-8, "max_iter": 1000, "tol": 1.0e-6},
    "KNN": {"k": 3},
    "DT": {"min_leaf": 2, "pruning_folds": 5, "seed": 1},
    "NB": {"var_floor": 1.0e-9},
}

LEFT_EDGES = ["Fp1-F3", "F3-F7", "C3-T3", "C3-P3", "P3-T5", "P3-O1"]
RIGHT_EDGES = ["C4-P4", "P4-T6", "F4-F8"]


def _default_coupling() -> Dict[str, Dict[str, float]]:
    # Intra-left coupling is weakened in the MDD-like class; right edges match.
    shared = {edge: 0.6 for edge in RIGHT_EDGES}
    return {
        "MDD": {**{edge: 0.3 for edge in LEFT_EDGES}, **shared},
        "NC": {**{edge: 0.45 for edge in LEFT_EDGES}, **shared},
    }


def parse_edge(edge: str) -> Tuple[str, str]:
    """Split `A-B` into canonical channel names (case-insensitive)."""
    parts = edge.split(":")[-1].split("-")
    if len(parts) != 2:
        raise ConfigError(f"edge '{edge}' must look like 'C3-P3'", edge=edge)
    lookup = {c.lower(): c for c in CHANNELS}
    names = []
    for part in parts:
        name = lookup.get(part.strip().lower())
        if name is None:
            raise ConfigError(f"edge '{edge}' names unknown channel '{part}'", edge=edge)
        names.append(name)
    if names[0] == names[1]:
        raise ConfigError(f"edge '{edge}' is a self-loop", edge=edge)
    return names[0], names[1]


class SynthConfig(BaseModel):
    """Synthetic dataset with a known phase-coupling structure per class.

    Each entry of `coupling_strength_by_class[label]` maps a directed edge
    `source-target` to a strength in [0, 1]. `subject_gain_sd` is the log-normal
    spread of a per-subject, per-channel amplitude gain; it leaves phases alone,
    so PLI and the scale-free features carry no subject offset. 0 disables it.
    """
    subjects_per_class: int = 20
    epochs_per_subject: int = 40
    fs: float = 250.0
    epoch_len_s: float = 2.0
    base_freq: float = 10.0
    coupling_strength_by_class: Dict[str, Dict[str, float]] = Field(default_factory=_default_coupling)
    noise_sd: float = 0.5
    noise_color: float = 0.5
    oscillation_amplitude: float = 1.0
    phase_jitter: float = 0.5
    coupling_lag: float = math.pi / 4
    subject_gain_sd: float = 0.5
    seed: int = 1

    @model_validator(mode="after")
    def _ranges(self) -> "SynthConfig":
        if self.subjects_per_class < 1:
            raise ConfigError("subjects_per_class must be >= 1")
        if self.epochs_per_subject < 1:
            raise ConfigError("epochs_per_subject must be >= 1")
        if self.fs <= 0 or self.epoch_len_s <= 0:
            raise ConfigError("fs and epoch_len_s must be positive")
        if int(round(self.fs * self.epoch_len_s)) < 16:
            raise ConfigError("epochs must hold at least 16 samples")
        if not 0 < self.base_freq < self.fs / 2:
            raise ConfigError(f"base_freq must lie in (0, {self.fs / 2}) Hz")
        if min(self.noise_sd, self.oscillation_amplitude, self.phase_jitter, self.subject_gain_sd) < 0:
            raise ConfigError("noise_sd, oscillation_amplitude, phase_jitter and subject_gain_sd "
                              "must be non-negative")
        if not 0 <= self.noise_color < 1:
            raise ConfigError("noise_color must lie in [0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for label, edges in self.coupling_strength_by_class.items():
            if label not in LABELS:
                raise ConfigError(f"unknown class label '{label}'", label=label)
            for edge, strength in edges.items():
                parse_edge(edge)
                if not 0.0 <= strength <= 1.0:
                    raise ConfigError(f"coupling strength {strength} on {edge} outside [0, 1]",
                                      label=label, edge=edge)
        return self


class FilterSettings(BaseModel):
    enabled: bool = True
    lo: float = 1.0
    hi: float = 40.0
    taps: int = 251


class FeatureSettings(BaseModel):
    blocks: List[Literal["linear", "nonlinear", "pli"]] = Field(
        default_factory=lambda: ["linear", "nonlinear", "pli"])
    p2p_windows: int = 8
    ar_order: int = 10
    psd_grid: Tuple[float, float, float] = (1.0, 40.0, 0.5)
    spectral_band: Tuple[float, float] = (1.0, 40.0)
    svd_embedding: int = 20
    svd_delay: int = 1
    renyi_orders: Tuple[float, float, float] = (0.5, 2.0, 3.0)
    renyi_bins: int = 16
    pli_edge_trim: float = 0.05
    pli_bands: Dict[str, Tuple[float, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _ranges(self) -> "FeatureSettings":
        if self.ar_order < 2:
            raise ConfigError("ar_order must be >= 2")
        if self.renyi_bins < 4 or any(q <= 0 or q == 1 for q in self.renyi_orders):
            raise ConfigError("renyi orders must be positive and != 1, bins >= 4")
        if not 0 <= self.pli_edge_trim < 0.5:
            raise ConfigError("pli_edge_trim must lie in [0, 0.5)")
        return self


class SelectionSettings(BaseModel):
    method: SelectorName = "relieff"
    n_select: int = 18
    scope: Literal["fold", "global"] = "fold"
    relieff_k: int = 10
    relieff_m: Optional[int] = None

    @model_validator(mode="after")
    def _ranges(self) -> "SelectionSettings":
        if self.n_select < 1:
            raise ConfigError("n_select must be >= 1")
        if self.relieff_k < 1:
            raise ConfigError("relieff_k must be >= 1")
        return self


class ModelSpec(BaseModel):
    """Classifier kind plus hyperparameters, filled in from MODEL_DEFAULTS."""
    kind: ModelKind
    hyperparameters: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _fill_defaults(self) -> "ModelSpec":
        defaults = MODEL_DEFAULTS[self.kind]
        unknown = set(self.hyperparameters) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown {self.kind} hyperparameters: {sorted(unknown)}", kind=self.kind)
        self.hyperparameters = {**defaults, **self.hyperparameters}
        return self


class EvaluationSettings(BaseModel):
    mode: Literal["single", "grid", "stats"] = "single"
    featureset: FeatureSetTag = "All"
    featuresets: List[FeatureSetTag] = Field(default_factory=lambda: list(FEATURESET_TAGS))
    selectors: List[SelectorName] = Field(default_factory=lambda: list(SELECTOR_NAMES))
    standardization: Literal["zscore", "minmax"] = "zscore"
    alpha: float = 0.05
    bonferroni_divisor: Optional[int] = None
    stats_level: Literal["subject", "epoch"] = "subject"
    save_models: bool = False


class DatasetSource(BaseModel):
    path: Optional[str] = None
    synth: Optional[SynthConfig] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetSource":
        if self.path and self.synth:
            raise ConfigError("dataset source must be either a file path or a synthetic config")
        if not self.path and self.synth is None:
            self.synth = SynthConfig()
        return self


def _default_models() -> List[ModelSpec]:
    return [ModelSpec(kind=kind) for kind in MODEL_KINDS]


class PipelineConfig(BaseModel):
    """Everything a pipeline run depends on; outputs are a pure function of it."""
    seed: int = 1
    dataset: DatasetSource = Field(default_factory=DatasetSource)
    filter: FilterSettings = Field(default_factory=FilterSettings)
    features: FeatureSettings = Field(default_factory=FeatureSettings)
    selection: SelectionSettings = Field(default_factory=SelectionSettings)
    models: List[ModelSpec] = Field(default_factory=_default_models)
    evaluation: EvaluationSettings = Field(default_factory=EvaluationSettings)
    output_dir: str = Field(default_factory=lambda: settings.OUTPUT_DIR)
    workers: int = Field(default_factory=lambda: settings.WORKERS)

    @model_validator(mode="after")
    def _ranges(self) -> "PipelineConfig":
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.models:
            raise ConfigError("at least one model spec is required")
        return self

    def synth_config(self) -> SynthConfig:
        """The synthetic source with the run seed applied."""
        base = self.dataset.synth or SynthConfig()
        return base.model_copy(update={"seed": self.seed})
