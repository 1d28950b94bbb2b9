import logging
from typing import List, Literal

import numpy as np
from scipy import signal as sp_signal

from backend.models.signal_models import Epoch, FeatureMatrix, Recording, StandardizationParams
from backend.services.errors import (
    ArityMismatch,
    ConfigError,
    DataError,
    InsufficientData,
    InvalidBand,
    SignalTooShort,
)

logger = logging.getLogger(__name__)

DEFAULT_TAPS = 251


def bandpass_kernel(fs: float, lo: float, hi: float, taps: int = DEFAULT_TAPS) -> np.ndarray:
    """Hamming-windowed sinc band-pass kernel with its DC gain forced to zero."""
    if not (0 < lo < hi < fs / 2):
        raise InvalidBand(f"band [{lo}, {hi}] Hz is invalid for fs={fs} Hz", lo=lo, hi=hi, fs=fs)
    if taps < 3 or taps % 2 == 0:
        raise ConfigError(f"taps must be odd and >= 3, got {taps}", taps=taps)
    kernel = sp_signal.firwin(taps, [lo, hi], pass_zero=False, window="hamming", fs=fs)
    # Subtract the residual DC response in the shape of the window so a constant
    # input is annihilated exactly.
    window = sp_signal.get_window("hamming", taps, fftbins=False)
    kernel = kernel - window * (kernel.sum() / window.sum())
    return kernel


def bandpass_fir(x: np.ndarray, fs: float, lo: float = 1.0, hi: float = 40.0,
                 taps: int = DEFAULT_TAPS) -> np.ndarray:
    """Zero-phase band-pass: the windowed-sinc kernel applied forward and backward."""
    x = np.asarray(x, dtype=np.float64)
    kernel = bandpass_kernel(fs, lo, hi, taps)
    if x.shape[-1] <= taps:
        raise SignalTooShort(f"signal of {x.shape[-1]} samples is not longer than {taps} taps",
                             samples=x.shape[-1], taps=taps)
    padlen = min(3 * taps, x.shape[-1] - 1)
    return sp_signal.filtfilt(kernel, [1.0], x, axis=-1, padlen=padlen)


def fit_taps(length: int, taps: int = DEFAULT_TAPS) -> int:
    """Largest odd tap count not exceeding `taps` that a signal of `length` samples admits."""
    limit = min(taps, length - 1)
    if limit % 2 == 0:
        limit -= 1
    return max(limit, 3)


def filter_epoch(epoch: Epoch, lo: float = 1.0, hi: float = 40.0, taps: int = DEFAULT_TAPS) -> Epoch:
    taps = fit_taps(epoch.length, taps)
    filtered = bandpass_fir(epoch.samples, epoch.fs, lo, hi, taps)
    return epoch.model_copy(update={"samples": filtered})


def epoch_recording(rec: Recording, epoch_len_s: float = 2.0, count: int = 40) -> List[Epoch]:
    """Cut `count` consecutive non-overlapping epochs from the start of a recording."""
    if count < 0:
        raise ConfigError(f"epoch count must be non-negative, got {count}")
    length = int(round(epoch_len_s * rec.fs))
    if length < 4:
        raise ConfigError(f"epoch of {epoch_len_s} s at {rec.fs} Hz is shorter than 4 samples")
    needed = count * length
    available = rec.samples.shape[1]
    if needed > available:
        raise InsufficientData(
            f"recording has {available} samples per channel, {needed} needed for {count} epochs",
            subject=rec.subject_id,
        )
    epochs = [
        Epoch(
            subject_id=rec.subject_id,
            label=rec.label,
            fs=rec.fs,
            samples=rec.samples[:, i * length:(i + 1) * length].copy(),
            epoch_index=i,
        )
        for i in range(count)
    ]
    logger.debug(f"Cut {count} epochs of {length} samples for subject {rec.subject_id}")
    return epochs


def standardize_fit(train: FeatureMatrix,
                    mode: Literal["zscore", "minmax"] = "zscore") -> StandardizationParams:
    """Fit per-column parameters on training rows only."""
    values = train.values
    if train.n_rows == 0:
        raise DataError("cannot fit standardization on an empty matrix")
    if mode == "zscore":
        center = values.mean(axis=0)
        ddof = 1 if values.shape[0] > 1 else 0
        scale = values.std(axis=0, ddof=ddof)
    elif mode == "minmax":
        lo = values.min(axis=0)
        hi = values.max(axis=0)
        center = (hi + lo) / 2.0
        scale = (hi - lo) / 2.0
    else:
        raise ConfigError(f"unknown standardization mode '{mode}'")
    # Round-off in the mean leaves a tiny spread on constant columns.
    scale = np.where(np.ptp(values, axis=0) == 0, 0.0, scale)
    return StandardizationParams(mean=center, std=scale, mode=mode)


def standardize_apply(params: StandardizationParams, m: FeatureMatrix) -> FeatureMatrix:
    """Apply (x - mean) / std per column; zero-scale columns map to 0."""
    if m.n_features != params.arity:
        raise ArityMismatch(f"matrix has {m.n_features} columns, parameters were fitted on {params.arity}")
    scale = params.std
    safe = np.where(scale > 0, scale, 1.0)
    out = (m.values - params.mean) / safe
    out[:, scale == 0] = 0.0
    return m.with_values(out)
