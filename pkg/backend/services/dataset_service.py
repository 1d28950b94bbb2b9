import json
import logging
import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy import signal as sp_signal

from backend.models.config_models import SynthConfig, parse_edge
from backend.models.signal_models import (
    CHANNELS,
    DEFAULT_LAYOUT,
    LABELS,
    META_COLUMNS,
    Dataset,
    Epoch,
    FeatureMatrix,
)
from backend.services.errors import ConfigError, ParseError, SchemaError, UnknownChannel
from backend.services.export_service import config_digest, output_error, read_header, write_frame_csv

logger = logging.getLogger(__name__)

EPOCH_KEY_COLUMNS = ["subject_id", "label", "epoch_index", "sample_index"]
DEFAULT_FS = 250.0

# Samples discarded while the coloured-noise filter settles.
_NOISE_BURN_IN = 100
# Spawn key that keeps subject gain streams apart from the per-epoch streams.
_GAIN_STREAM = 1


# ---------------------------------------------------------------------------
# Epoch CSV
# ---------------------------------------------------------------------------

def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    """Long-form table, one row per sample, sorted by (subject_id, epoch_index, sample_index)."""
    ordered = sorted(dataset.epochs, key=lambda e: (e.subject_id, e.epoch_index))
    parts = []
    for epoch in ordered:
        length = epoch.length
        part = pd.DataFrame(epoch.samples.T, columns=list(CHANNELS))
        part.insert(0, "sample_index", np.arange(length, dtype=np.int64))
        part.insert(0, "epoch_index", np.full(length, epoch.epoch_index, dtype=np.int64))
        part.insert(0, "label", [epoch.label] * length)
        part.insert(0, "subject_id", [epoch.subject_id] * length)
        parts.append(part)
    if not parts:
        return pd.DataFrame(columns=EPOCH_KEY_COLUMNS + list(CHANNELS))
    return pd.concat(parts, ignore_index=True)


def write_dataset(dataset: Dataset, path: str, digest: Optional[str] = None) -> str:
    fs = dataset.fs if dataset.epochs else DEFAULT_FS
    write_frame_csv(path, "epochs", dataset_frame(dataset), digest, fs=repr(float(fs)))
    logger.info(f"Wrote {len(dataset.epochs)} epochs of {len(dataset.subjects)} subjects to {path}")
    return path


def _canonical_channel_columns(columns: List[str]) -> Dict[str, str]:
    channel_columns = [c for c in columns if c not in EPOCH_KEY_COLUMNS]
    mapping: Dict[str, str] = {}
    for column in channel_columns:
        try:
            mapping[column] = DEFAULT_LAYOUT.canonical_name(column)
        except UnknownChannel:
            raise SchemaError(f"column '{column}' is not a known channel", column=column)
    if sorted(mapping.values()) != sorted(CHANNELS):
        raise SchemaError(
            f"epoch file has {len(channel_columns)} channel columns, expected the {len(CHANNELS)} "
            f"canonical channels", columns=len(channel_columns),
        )
    return mapping


def _check_numeric(frame: pd.DataFrame, column: str) -> None:
    """Raise ParseError at the first cell of `column` that is not a finite decimal."""
    raw = frame[column]
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = ~np.isfinite(parsed.to_numpy(dtype=np.float64))
    if bad.any():
        pos = int(np.flatnonzero(bad)[0])
        raise ParseError(f"cannot parse value '{raw.iloc[pos]}' as a number",
                         row=int(raw.index[pos]) + 1, column=column)


def load_epochs_csv(path: str, fs: Optional[float] = None) -> Dataset:
    """Load a long-form epoch CSV into a Dataset, epochs grouped by subject in file order.

    `fs` defaults to the value recorded in the file header, else 250 Hz.
    """
    if not os.path.exists(path):
        raise ParseError(f"epoch file '{path}' does not exist", path=path)
    meta = read_header(path)
    if fs is None:
        fs = float(meta.get("fs", DEFAULT_FS))
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip",
                            dtype={"subject_id": str, "label": str})
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed epoch file: {e}", path=path)
    except pd.errors.EmptyDataError:
        raise ParseError("epoch file is empty", path=path)
    except UnicodeDecodeError as e:
        raise ParseError(f"epoch file is not UTF-8 text: {e.reason}", path=path, byte=e.start)

    missing = [c for c in EPOCH_KEY_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"epoch file lacks columns {missing}", path=path)
    rename = _canonical_channel_columns(list(frame.columns))
    frame = frame.rename(columns=rename)

    for column in ("epoch_index", "sample_index"):
        _check_numeric(frame, column)
    frame["label"] = frame["label"].fillna("")
    bad_labels = sorted(set(frame["label"]) - set(LABELS))
    if bad_labels:
        row = int(np.flatnonzero(~frame["label"].isin(LABELS))[0])
        raise ParseError(f"unknown label '{bad_labels[0]}'", row=row + 1, column="label")
    blank = frame["subject_id"].isna() | (frame["subject_id"].astype(str).str.strip() == "")
    if blank.any():
        row = int(np.flatnonzero(blank.to_numpy())[0])
        raise ParseError("missing subject id", row=row + 1, column="subject_id")

    epochs: List[Epoch] = []
    for (subject_id, epoch_index), group in frame.groupby(["subject_id", "epoch_index"], sort=False):
        where = {"subject": subject_id, "epoch": int(epoch_index)}
        # A channel that is empty across the whole epoch means the epoch lacks it.
        absent = [c for c in CHANNELS if group[c].isna().all()]
        if absent:
            raise SchemaError(f"epoch has {len(CHANNELS) - len(absent)} channels, missing {absent}", **where)
        for column in CHANNELS:
            if group[column].dtype == object or group[column].isna().any():
                try:
                    _check_numeric(frame.loc[group.index], column)
                except ParseError as e:
                    raise e.add_context(**where)
        labels = set(group["label"])
        if len(labels) != 1:
            raise SchemaError("epoch rows disagree on label", **where)
        group = group.sort_values("sample_index", kind="stable")
        order = group["sample_index"].to_numpy(dtype=np.int64)
        if not np.array_equal(order, np.arange(len(order))):
            raise SchemaError("sample_index must run 0..L-1 without gaps", **where)
        samples = group[list(CHANNELS)].to_numpy(dtype=np.float64).T
        try:
            epochs.append(Epoch(subject_id=str(subject_id), label=labels.pop(), fs=fs,
                                samples=samples, epoch_index=int(epoch_index)))
        except ValidationError as e:
            raise SchemaError(f"invalid epoch: {e.errors()[0]['msg']}", **where)

    lengths = sorted({e.length for e in epochs})
    if len(lengths) > 1:
        short = next(e for e in epochs if e.length != epochs[0].length)
        raise SchemaError(f"ragged epochs: lengths {lengths}", subject=short.subject_id,
                          epoch=short.epoch_index)
    # Group by subject, keeping the order subjects first appear in the file.
    first_seen = {s: i for i, s in enumerate(dict.fromkeys(e.subject_id for e in epochs))}
    epochs.sort(key=lambda e: first_seen[e.subject_id])
    dataset = Dataset(epochs=epochs, provenance={"source": "file", "path": os.path.basename(path),
                                                 "digest": meta.get("digest", "none")})
    logger.info(f"Loaded {len(epochs)} epochs of {len(dataset.subjects)} subjects from {path}")
    return dataset


# ---------------------------------------------------------------------------
# Binary cache
# ---------------------------------------------------------------------------

def write_dataset_npz(dataset: Dataset, path: str) -> str:
    try:
        np.savez(
            path,
            samples=np.stack([e.samples for e in dataset.epochs]),
            subject_ids=np.array([e.subject_id for e in dataset.epochs]),
            labels=np.array([e.label for e in dataset.epochs]),
            epoch_index=np.array([e.epoch_index for e in dataset.epochs], dtype=np.int64),
            fs=np.array(dataset.fs),
            provenance=np.array(json.dumps(dataset.provenance, sort_keys=True)),
        )
    except OSError as e:
        raise output_error(e, path)
    logger.info(f"Cached {len(dataset.epochs)} epochs to {path}")
    return path


def load_dataset_npz(path: str) -> Dataset:
    try:
        with np.load(path, allow_pickle=False) as data:
            fs = float(data["fs"])
            epochs = [
                Epoch(subject_id=str(s), label=str(lab), fs=fs, samples=x, epoch_index=int(i))
                for s, lab, x, i in zip(data["subject_ids"], data["labels"], data["samples"],
                                        data["epoch_index"])
            ]
            provenance = json.loads(str(data["provenance"]))
    except (KeyError, ValueError, OSError) as e:
        raise ParseError(f"unreadable dataset cache '{path}': {e}", path=path)
    return Dataset(epochs=epochs, provenance=provenance)


def load_dataset(path: str) -> Dataset:
    if path.endswith(".npz"):
        return load_dataset_npz(path)
    return load_epochs_csv(path)


# ---------------------------------------------------------------------------
# Feature matrix CSV
# ---------------------------------------------------------------------------

def write_features(features: FeatureMatrix, path: str, digest: Optional[str] = None) -> str:
    write_frame_csv(path, "features", features.to_frame(), digest)
    logger.info(f"Wrote feature matrix {features.n_rows}x{features.n_features} to {path}")
    return path


def load_features_csv(path: str) -> FeatureMatrix:
    if not os.path.exists(path):
        raise ParseError(f"feature file '{path}' does not exist", path=path)
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip",
                            dtype={"subject_id": str, "label": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"malformed feature file: {e}", path=path)
    for column in frame.columns:
        if column in ("subject_id", "label"):
            continue
        _check_numeric(frame, column)
    missing = [c for c in META_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"feature file lacks columns {missing}", path=path)
    if not frame["label"].isin(LABELS).all():
        raise SchemaError("feature file holds labels outside MDD/NC", path=path)
    features = FeatureMatrix.from_frame(frame)
    logger.info(f"Loaded feature matrix {features.n_rows}x{features.n_features} from {path}")
    return features


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

def _epoch_rng(seed: int, class_idx: int, subject_idx: int, epoch_idx: int) -> np.random.Generator:
    """Counter-based stream per epoch, so any epoch can be regenerated on its own."""
    sequence = np.random.SeedSequence([seed, class_idx, subject_idx, epoch_idx])
    return np.random.Generator(np.random.Philox(sequence))


def subject_gains(cfg: SynthConfig, class_idx: int, subject_idx: int) -> np.ndarray:
    """Per-channel amplitude gains of one subject, shared by all its epochs."""
    if cfg.subject_gain_sd == 0:
        return np.ones((len(CHANNELS), 1))
    sequence = np.random.SeedSequence([cfg.seed, class_idx, subject_idx], spawn_key=(_GAIN_STREAM,))
    rng = np.random.Generator(np.random.Philox(sequence))
    return np.exp(rng.normal(0.0, cfg.subject_gain_sd, size=(len(CHANNELS), 1)))


def _couplings(cfg: SynthConfig, label: str) -> List[tuple]:
    resolved = []
    for edge, strength in cfg.coupling_strength_by_class.get(label, {}).items():
        source, target = parse_edge(edge)
        resolved.append((CHANNELS.index(source), CHANNELS.index(target), float(strength)))
    return resolved


def synth_epoch(cfg: SynthConfig, label: str, subject_idx: int, epoch_idx: int) -> np.ndarray:
    """One 16 x L epoch: phase-diffusing oscillators, lagged coupling, AR(1) noise, subject gains."""
    class_idx = LABELS.index(label)
    rng = _epoch_rng(cfg.seed, class_idx, subject_idx, epoch_idx)
    length = int(round(cfg.fs * cfg.epoch_len_s))
    n_channels = len(CHANNELS)
    t = np.arange(length) / cfg.fs

    phase0 = rng.uniform(-np.pi, np.pi, size=(n_channels, 1))
    walk = np.cumsum(rng.normal(0.0, cfg.phase_jitter, size=(n_channels, length)), axis=1)
    oscillation = np.cos(2.0 * np.pi * cfg.base_freq * t + phase0 + walk)

    for source, target, strength in _couplings(cfg, label):
        if strength == 0.0:
            continue
        lagged = np.real(sp_signal.hilbert(oscillation[source]) * np.exp(-1j * cfg.coupling_lag))
        mixed = (1.0 - strength) * oscillation[target] + strength * lagged
        oscillation[target] = mixed / np.hypot(1.0 - strength, strength)

    white = rng.normal(0.0, 1.0, size=(n_channels, length + _NOISE_BURN_IN))
    c = cfg.noise_color
    noise = sp_signal.lfilter([np.sqrt(1.0 - c * c)], [1.0, -c], white, axis=1)[:, _NOISE_BURN_IN:]
    gains = subject_gains(cfg, class_idx, subject_idx)
    return gains * (cfg.oscillation_amplitude * oscillation + cfg.noise_sd * noise)


def synth_dataset(cfg: SynthConfig) -> Dataset:
    """Deterministic dataset whose classes differ only in their coupling strengths."""
    if not isinstance(cfg, SynthConfig):
        raise ConfigError("synth_dataset expects a SynthConfig")
    epochs: List[Epoch] = []
    for label in LABELS:
        for subject_idx in range(cfg.subjects_per_class):
            subject_id = f"{label}-{subject_idx + 1:03d}"
            for epoch_idx in range(cfg.epochs_per_subject):
                samples = synth_epoch(cfg, label, subject_idx, epoch_idx)
                epochs.append(Epoch(subject_id=subject_id, label=label, fs=cfg.fs,
                                    samples=samples, epoch_index=epoch_idx))
    provenance = {"source": "synthetic", "seed": cfg.seed, "config_digest": config_digest(cfg)}
    dataset = Dataset(epochs=epochs, provenance=provenance)
    logger.info(
        f"Generated synthetic dataset: {2 * cfg.subjects_per_class} subjects x "
        f"{cfg.epochs_per_subject} epochs, seed={cfg.seed}"
    )
    return dataset
