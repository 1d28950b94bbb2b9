from enum import Enum
from typing import Any, Dict, List, Literal, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from backend.services.errors import ArityMismatch, SchemaError, UnknownChannel

# Fixed canonical order; feature and edge indices depend on it.
CHANNELS: Tuple[str, ...] = (
    "Fp1", "Fp2", "F3", "F4", "C3", "C4", "P3", "P4",
    "O1", "O2", "F7", "F8", "T3", "T4", "T5", "T6",
)

LABELS: Tuple[str, str] = ("MDD", "NC")
POSITIVE_LABEL = "MDD"

Label = Literal["MDD", "NC"]

META_COLUMNS = ["subject_id", "label", "epoch_index"]


class Hemisphere(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"


def hemisphere_of(channel: str) -> Hemisphere:
    """Odd electrode suffix is left, even is right."""
    return Hemisphere.LEFT if int(channel[-1]) % 2 == 1 else Hemisphere.RIGHT


def label_to_int(label: str) -> int:
    return 1 if label == POSITIVE_LABEL else 0


class ChannelLayout(BaseModel):
    """The 16-electrode montage used throughout the pipeline."""
    model_config = ConfigDict(frozen=True)

    names: Tuple[str, ...] = CHANNELS

    @field_validator("names")
    @classmethod
    def _canonical(cls, names: Tuple[str, ...]) -> Tuple[str, ...]:
        if tuple(names) != CHANNELS:
            raise ValueError(f"channel layout must be the canonical 16-channel order {list(CHANNELS)}")
        return tuple(names)

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def hemisphere(self) -> Dict[str, Hemisphere]:
        return {name: hemisphere_of(name) for name in self.names}

    def channels_in(self, side: Hemisphere) -> List[str]:
        return [name for name in self.names if hemisphere_of(name) == side]

    def index(self, name: str) -> int:
        return self.names.index(self.canonical_name(name))

    def canonical_name(self, name: str) -> str:
        """Case-insensitive lookup, so `FP1` and `fp1` both resolve to `Fp1`."""
        wanted = name.strip().lower()
        for candidate in self.names:
            if candidate.lower() == wanted:
                return candidate
        raise UnknownChannel(f"unknown channel '{name}'", channel=name)


DEFAULT_LAYOUT = ChannelLayout()


class Recording(BaseModel):
    """A continuous multichannel recording of one subject."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    subject_id: str
    label: Label
    fs: float = 250.0
    samples: np.ndarray

    @field_validator("fs")
    @classmethod
    def _positive_fs(cls, fs: float) -> float:
        if not fs > 0:
            raise ValueError("sampling rate must be positive")
        return fs

    @field_validator("samples", mode="before")
    @classmethod
    def _check_samples(cls, samples: Any) -> np.ndarray:
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(CHANNELS):
            raise ValueError(f"samples must be {len(CHANNELS)} x T, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        return arr


class Epoch(BaseModel):
    """A fixed-length multichannel segment, the unit of classification."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    subject_id: str
    label: Label
    fs: float = 250.0
    samples: np.ndarray
    epoch_index: int = 0

    @field_validator("samples", mode="before")
    @classmethod
    def _check_samples(cls, samples: Any) -> np.ndarray:
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(CHANNELS):
            raise ValueError(f"epoch samples must be {len(CHANNELS)} x L, got shape {arr.shape}")
        if arr.shape[1] < 4:
            raise ValueError("epoch must hold at least 4 samples")
        if not np.all(np.isfinite(arr)):
            raise ValueError("epoch samples must be finite")
        return arr

    @property
    def length(self) -> int:
        return int(self.samples.shape[1])


class Dataset(BaseModel):
    """Epochs of several subjects sharing fs, layout and epoch length."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    epochs: List[Epoch]
    layout: ChannelLayout = DEFAULT_LAYOUT
    provenance: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _uniform(self) -> "Dataset":
        if not self.epochs:
            return self
        fs = {e.fs for e in self.epochs}
        lengths = {e.length for e in self.epochs}
        if len(fs) != 1:
            raise SchemaError(f"epochs disagree on sampling rate: {sorted(fs)}")
        if len(lengths) != 1:
            raise SchemaError(f"ragged epochs: lengths {sorted(lengths)}")
        labels: Dict[str, str] = {}
        for epoch in self.epochs:
            previous = labels.setdefault(epoch.subject_id, epoch.label)
            if previous != epoch.label:
                raise SchemaError(f"subject {epoch.subject_id} carries both labels", subject=epoch.subject_id)
        return self

    @property
    def fs(self) -> float:
        return self.epochs[0].fs

    @property
    def epoch_length(self) -> int:
        return self.epochs[0].length

    @property
    def subjects(self) -> List[str]:
        """Subject ids in order of first appearance."""
        return list(dict.fromkeys(e.subject_id for e in self.epochs))

    @property
    def subject_labels(self) -> Dict[str, str]:
        return {e.subject_id: e.label for e in self.epochs}

    def summary(self) -> Dict[str, Any]:
        labels = self.subject_labels
        return {
            "subjects": len(labels),
            "epochs": len(self.epochs),
            "fs": self.fs if self.epochs else None,
            "epoch_length": self.epoch_length if self.epochs else None,
            "subjects_per_label": {lab: sum(1 for v in labels.values() if v == lab) for lab in LABELS},
            "provenance": self.provenance,
        }


class StandardizationParams(BaseModel):
    """Per-column centre and scale fitted on a training fold.

    For `zscore` these are the mean and sample standard deviation; for `minmax`
    they are the mid-range and half-range, so both modes apply as (x - mean) / std.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray
    std: np.ndarray
    mode: Literal["zscore", "minmax"] = "zscore"

    @model_validator(mode="after")
    def _check(self) -> "StandardizationParams":
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have equal arity")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")
        return self

    @property
    def arity(self) -> int:
        return int(self.mean.shape[0])


class FeatureMatrix(BaseModel):
    """Rows are epochs, columns are named features, rows grouped by subject."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    feature_names: List[str]
    subject_ids: List[str]
    labels: List[Label]
    epoch_index: List[int]

    @field_validator("values", mode="before")
    @classmethod
    def _as_matrix(cls, values: Any) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
        return arr

    @model_validator(mode="after")
    def _rectangular(self) -> "FeatureMatrix":
        n_rows = len(self.subject_ids)
        if self.values.shape[0] != n_rows and not (n_rows == 0 and self.values.size == 0):
            raise ArityMismatch(f"{self.values.shape[0]} value rows for {n_rows} row labels")
        if len(self.labels) != n_rows or len(self.epoch_index) != n_rows:
            raise ArityMismatch("subject_ids, labels and epoch_index must have equal length")
        if n_rows and self.values.shape[1] != len(self.feature_names):
            raise ArityMismatch(
                f"{self.values.shape[1]} value columns for {len(self.feature_names)} feature names"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SchemaError("feature names must be unique")
        return self

    @property
    def n_rows(self) -> int:
        return len(self.subject_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def y(self) -> np.ndarray:
        """Binary labels, 1 = MDD (positive class)."""
        return np.array([label_to_int(lab) for lab in self.labels], dtype=np.int64)

    @property
    def groups(self) -> np.ndarray:
        return np.asarray(self.subject_ids, dtype=object)

    @property
    def subjects(self) -> List[str]:
        return list(dict.fromkeys(self.subject_ids))

    def columns(self, names: Sequence[str]) -> "FeatureMatrix":
        index = {name: i for i, name in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise SchemaError(f"unknown feature columns: {missing[:5]}")
        cols = [index[n] for n in names]
        return self.model_copy(update={"values": self.values[:, cols], "feature_names": list(names)})

    def rows(self, mask: np.ndarray) -> "FeatureMatrix":
        idx = np.flatnonzero(np.asarray(mask))
        return FeatureMatrix(
            values=self.values[idx],
            feature_names=list(self.feature_names),
            subject_ids=[self.subject_ids[i] for i in idx],
            labels=[self.labels[i] for i in idx],
            epoch_index=[self.epoch_index[i] for i in idx],
        )

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return self.model_copy(update={"values": np.asarray(values, dtype=np.float64)})

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.feature_names)
        frame.insert(0, "epoch_index", self.epoch_index)
        frame.insert(0, "label", self.labels)
        frame.insert(0, "subject_id", self.subject_ids)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "FeatureMatrix":
        missing = [c for c in META_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"feature table lacks columns {missing}")
        features = [c for c in frame.columns if c not in META_COLUMNS]
        return cls(
            values=frame[features].to_numpy(dtype=np.float64),
            feature_names=[str(c) for c in features],
            subject_ids=[str(s) for s in frame["subject_id"]],
            labels=[str(lab) for lab in frame["label"]],
            epoch_index=[int(i) for i in frame["epoch_index"]],
        )


# Selection operates on the same structure.
LabeledTable = FeatureMatrix
