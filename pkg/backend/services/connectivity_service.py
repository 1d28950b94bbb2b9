import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import signal as sp_signal

from backend.models.signal_models import CHANNELS, Epoch
from backend.services.errors import DegenerateSignal, LengthMismatch, PipelineError, SignalTooShort
from backend.services.signal_service import bandpass_fir, fit_taps

logger = logging.getLogger(__name__)

# Instantaneous phase in radians, wrapped to (-pi, pi].
PhaseSeries = np.ndarray

DEFAULT_EDGE_TRIM = 0.05

# Phase differences this close to zero count as zero lag (sign 0).
ZERO_LAG_TOL = 1e-9

_UPPER = np.triu_indices(len(CHANNELS), k=1)


def edge_names(prefix: str = "pli") -> List[str]:
    """Row-major upper-triangle edge names, e.g. `pli:Fp1-Fp2`."""
    return [f"{prefix}:{CHANNELS[i]}-{CHANNELS[j]}" for i, j in zip(*_UPPER)]


class ConnectivityMatrix(BaseModel):
    """Symmetric 16x16 PLI matrix with zero diagonal and entries in [0, 1]."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    channels: Tuple[str, ...] = CHANNELS

    @field_validator("values", mode="before")
    @classmethod
    def _check(cls, values) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        n = len(CHANNELS)
        if arr.shape != (n, n):
            raise ValueError(f"connectivity matrix must be {n}x{n}, got {arr.shape}")
        if not np.array_equal(arr, arr.T):
            raise ValueError("connectivity matrix must be symmetric")
        if np.any(np.diag(arr) != 0):
            raise ValueError("connectivity matrix diagonal must be zero")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("connectivity values must lie in [0, 1]")
        return arr


class EdgeVector(BaseModel):
    """The 120 upper-triangle entries of a connectivity matrix, in row-major order."""
    names: List[str]
    values: List[float]

    @model_validator(mode="after")
    def _length(self) -> "EdgeVector":
        expected = len(_UPPER[0])
        if len(self.names) != expected or len(self.values) != expected:
            raise ValueError(f"edge vector must hold {expected} entries")
        return self

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.values))


def wrap_phase(d: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(d, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def analytic_phase(x: np.ndarray) -> PhaseSeries:
    """Instantaneous phase of the analytic signal of the mean-removed series.

    Accepts a single series or a (channels, samples) array; phases are taken
    along the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 16:
        raise SignalTooShort(f"analytic phase needs at least 16 samples, got {x.shape[-1]}")
    centered = x - x.mean(axis=-1, keepdims=True)
    flat = np.ptp(x, axis=-1) == 0
    if np.any(flat):
        raise DegenerateSignal("analytic phase of a constant signal",
                               rows=np.flatnonzero(np.atleast_1d(flat)).tolist())
    phase = np.angle(sp_signal.hilbert(centered, axis=-1))
    return np.where(phase == -np.pi, np.pi, phase)


def _trim_slice(length: int, trim: float) -> slice:
    cut = int(np.floor(trim * length))
    return slice(cut, length - cut)


def _lag_signs(delta: np.ndarray) -> np.ndarray:
    return np.where(np.abs(delta) <= ZERO_LAG_TOL, 0.0, np.sign(delta))


def pli_pair(px: PhaseSeries, py: PhaseSeries, trim: float = 0.0) -> float:
    """|mean sign(wrap(px - py))| with sign(0) = 0."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    if px.shape != py.shape:
        raise LengthMismatch(f"phase series lengths differ: {px.shape[-1]} vs {py.shape[-1]}")
    if px.shape[-1] < 16:
        raise SignalTooShort(f"PLI needs at least 16 samples, got {px.shape[-1]}")
    window = _trim_slice(px.shape[-1], trim)
    signs = _lag_signs(wrap_phase(px[window] - py[window]))
    return float(abs(signs.mean()))


def _channel_phases(samples: np.ndarray) -> np.ndarray:
    try:
        return analytic_phase(samples)
    except DegenerateSignal as e:
        flat = [CHANNELS[i] for i in e.context.get("rows", [])]
        raise DegenerateSignal(f"constant channel(s) {flat}", channels=flat)


def pli_matrix(epoch: Epoch, trim: float = DEFAULT_EDGE_TRIM,
               band: Optional[Tuple[float, float]] = None) -> ConnectivityMatrix:
    """PLI between every channel pair of an epoch, optionally after a band-pass."""
    samples = epoch.samples
    if band is not None:
        samples = bandpass_fir(samples, epoch.fs, band[0], band[1], fit_taps(epoch.length))
    phases = _channel_phases(samples)
    window = _trim_slice(phases.shape[1], trim)
    rows, cols = _UPPER
    delta = wrap_phase(phases[rows, window] - phases[cols, window])
    upper = np.abs(_lag_signs(delta).mean(axis=1))
    values = np.zeros((len(CHANNELS), len(CHANNELS)))
    values[rows, cols] = upper
    values[cols, rows] = upper
    return ConnectivityMatrix(values=values)


def vectorize_upper(m: ConnectivityMatrix, prefix: str = "pli") -> EdgeVector:
    return EdgeVector(names=edge_names(prefix), values=m.values[_UPPER].tolist())


def reassemble(vector: EdgeVector | Sequence[float]) -> ConnectivityMatrix:
    values = vector.values if isinstance(vector, EdgeVector) else list(vector)
    matrix = np.zeros((len(CHANNELS), len(CHANNELS)))
    matrix[_UPPER] = values
    matrix = matrix + matrix.T
    return ConnectivityMatrix(values=matrix)


def extract_pli(epoch: Epoch, trim: float = DEFAULT_EDGE_TRIM,
                bands: Optional[Dict[str, Tuple[float, float]]] = None) -> Dict[str, float]:
    """Broadband `pli:` edges plus `pli_<band>:` edges for every configured band."""
    try:
        features = vectorize_upper(pli_matrix(epoch, trim)).as_dict()
        for name, band in sorted((bands or {}).items()):
            features.update(vectorize_upper(pli_matrix(epoch, trim, band), prefix=f"pli_{name}").as_dict())
    except PipelineError as e:
        raise e.add_context(subject=epoch.subject_id, epoch=epoch.epoch_index)
    return features


def mean_connectivity(matrices: Sequence[ConnectivityMatrix]) -> ConnectivityMatrix:
    stacked = np.stack([m.values for m in matrices])
    mean = stacked.mean(axis=0)
    return ConnectivityMatrix(values=mean)
