import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import integrate
from scipy import signal as sp_signal

from backend.models.config_models import FeatureSettings
from backend.models.signal_models import CHANNELS, Epoch
from backend.services.errors import (
    DegenerateSignal,
    InvalidDistribution,
    NonFiniteFeature,
    NumericalInstability,
    PipelineError,
    SignalTooShort,
)

logger = logging.getLogger(__name__)

LINEAR_FEATURES: List[str] = [
    "variance", "mean_p2p", "mean_square", "mobility", "complexity",
    "ar_max_psd", "ar_peak_freq", "ar_psd_integral",
]
DEFAULT_RENYI_ORDERS: Tuple[float, ...] = (0.5, 2.0, 3.0)


def renyi_feature_name(q: float) -> str:
    return f"renyi_q{q:g}"


def nonlinear_features(orders: Sequence[float] = DEFAULT_RENYI_ORDERS) -> List[str]:
    return ["c0", "svden", "spec_ent"] + [renyi_feature_name(q) for q in orders]


def channel_feature_names(features: Sequence[str]) -> List[str]:
    """Feature-major naming: every channel of the first feature, then the next feature."""
    return [f"{feature}@{channel}" for feature in features for channel in CHANNELS]


def linear_feature_names() -> List[str]:
    return channel_feature_names(LINEAR_FEATURES)


def nonlinear_feature_names(orders: Sequence[float] = DEFAULT_RENYI_ORDERS) -> List[str]:
    return channel_feature_names(nonlinear_features(orders))


class UnivariateBlock(BaseModel):
    """Per-epoch linear (8 x 16) and nonlinear (6 x 16) feature values."""
    linear: Dict[str, float]
    nonlinear: Dict[str, float]

    @property
    def values(self) -> Dict[str, float]:
        return {**self.linear, **self.nonlinear}

    @property
    def names(self) -> List[str]:
        return list(self.linear) + list(self.nonlinear)


def _as_series(x: np.ndarray, minimum: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] < minimum:
        raise SignalTooShort(f"{what} needs at least {minimum} samples, got {x.shape[0]}",
                             samples=x.shape[0])
    return x


# ---------------------------------------------------------------------------
# Linear block
# ---------------------------------------------------------------------------

def basic_stats(x: np.ndarray, windows: int = 8) -> Tuple[float, float, float]:
    """(variance, mean_square, mean_p2p); mean_p2p averages max - min over equal sub-windows."""
    x = _as_series(x, max(windows, 2), "basic_stats")
    variance = float(np.var(x, ddof=1))
    mean_square = float(np.mean(x * x))
    mean_p2p = float(np.mean([np.ptp(w) for w in np.array_split(x, windows)]))
    return variance, mean_square, mean_p2p


def hjorth(x: np.ndarray) -> Tuple[float, float, float]:
    """Hjorth (activity, mobility, complexity); mobility is in radians per sample."""
    x = _as_series(x, 3, "hjorth")
    dx = np.diff(x)
    ddx = np.diff(dx)
    var_x = np.var(x, ddof=1)
    var_dx = np.var(dx, ddof=1)
    if var_x == 0 or var_dx == 0:
        raise DegenerateSignal("Hjorth parameters need a signal with non-zero variance and slope")
    var_ddx = np.var(ddx, ddof=1) if ddx.shape[0] > 1 else 0.0
    mobility = np.sqrt(var_dx / var_x)
    complexity = np.sqrt(var_ddx / var_dx) / mobility
    return float(var_x), float(mobility), float(complexity)


def burg(x: np.ndarray, order: int) -> Tuple[np.ndarray, float]:
    """Burg AR fit.

    Returns the prediction polynomial a (a[0] = 1, A(z) = sum a_k z^-k) and the
    final prediction error power.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if order < 1:
        raise NumericalInstability(f"AR order must be >= 1, got {order}")
    if x.shape[0] <= 2 * order:
        raise SignalTooShort(f"AR({order}) needs more than {2 * order} samples, got {x.shape[0]}",
                             samples=x.shape[0], order=order)
    forward = x.copy()
    backward = x.copy()
    a = np.array([1.0])
    error = float(np.dot(x, x) / x.shape[0])
    for m in range(order):
        fp = forward[1:]
        bp = backward[:-1]
        denominator = np.dot(fp, fp) + np.dot(bp, bp)
        if denominator == 0:
            raise NumericalInstability("Burg recursion hit a zero-energy prediction error", stage=m + 1)
        k = -2.0 * np.dot(bp, fp) / denominator
        if not np.isfinite(k) or abs(k) >= 1.0:
            raise NumericalInstability(f"Burg reflection coefficient {k} left (-1, 1)", stage=m + 1)
        forward = fp + k * bp
        backward = bp + k * fp
        a = np.concatenate([a, [0.0]])
        a = a + k * a[::-1]
        error *= 1.0 - k * k
    return a, error


def ar_psd(a: np.ndarray, error: float, freqs: np.ndarray, fs: float) -> np.ndarray:
    """One-sided AR power spectral density 2*e / (fs * |A(f)|^2)."""
    k = np.arange(a.shape[0])
    response = np.exp(-2j * np.pi * np.outer(freqs, k) / fs) @ a
    return 2.0 * error / (fs * np.abs(response) ** 2)


def psd_grid(lo: float = 1.0, hi: float = 40.0, step: float = 0.5) -> np.ndarray:
    n = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(n)


def ar_psd_features(x: np.ndarray, fs: float, order: int = 10,
                    grid: Optional[np.ndarray] = None) -> Tuple[float, float, float]:
    """(max_psd, peak_freq, psd_integral) of the Burg AR spectrum on `grid`."""
    if order < 2:
        raise NumericalInstability(f"AR order must be >= 2, got {order}")
    freqs = psd_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    a, error = burg(x, order)
    psd = ar_psd(a, error, freqs, fs)
    if not np.all(np.isfinite(psd)):
        raise NumericalInstability("AR spectrum is not finite", order=order)
    peak = int(np.argmax(psd))
    return float(psd[peak]), float(freqs[peak]), float(integrate.trapezoid(psd, freqs))


# ---------------------------------------------------------------------------
# Nonlinear block
# ---------------------------------------------------------------------------

def _normalized_shannon(p: np.ndarray, n_states: int) -> float:
    if n_states <= 1:
        return 0.0
    p = p[p > 0]
    return float(max(-np.sum(p * np.log(p)) / np.log(n_states), 0.0))


def spectral_entropy(x: np.ndarray, fs: float, band: Tuple[float, float] = (1.0, 40.0)) -> float:
    """Normalized Shannon entropy of the rectangular-window periodogram inside `band`."""
    x = _as_series(x, 64, "spectral_entropy")
    freqs, power = sp_signal.periodogram(x, fs=fs, window="boxcar", detrend=False)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    power = power[in_band]
    total = power.sum()
    if not total > 0:
        raise DegenerateSignal("no spectral power inside the entropy band", band=band)
    return _normalized_shannon(power / total, power.shape[0])


def delay_embedding(x: np.ndarray, m: int, tau: int) -> np.ndarray:
    span = (m - 1) * tau + 1
    return np.lib.stride_tricks.sliding_window_view(x, span)[:, ::tau]


def svd_entropy(x: np.ndarray, m: int = 20, tau: int = 1) -> float:
    x = _as_series(x, m * tau + 10, "svd_entropy")
    sv = np.linalg.svd(delay_embedding(x, m, tau), compute_uv=False)
    total = sv.sum()
    if not total > 0:
        raise DegenerateSignal("trajectory matrix has no non-zero singular value")
    return _normalized_shannon(sv / total, m)


def c0_complexity(x: np.ndarray) -> float:
    """Energy fraction left after removing spectral components above mean power."""
    x = _as_series(x, 64, "c0_complexity")
    energy = np.dot(x, x)
    if energy == 0:
        raise DegenerateSignal("C0 complexity of a zero-energy signal")
    spectrum = np.fft.fft(x)
    power = np.abs(spectrum) ** 2
    regular = np.where(power > power.mean(), spectrum, 0.0)
    irregular = x - np.real(np.fft.ifft(regular))
    return float(np.dot(irregular, irregular) / energy)


def renyi_entropy(p: np.ndarray, q: float) -> float:
    """Order-q Renyi entropy (natural log) of a discrete distribution."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistribution("probabilities must be non-negative and sum to 1")
    if q <= 0 or q == 1:
        raise InvalidDistribution(f"Renyi order must be positive and != 1, got {q}")
    p = p[p > 0]
    return float(max(np.log(np.sum(p ** q)) / (1.0 - q), 0.0))


def renyi_entropies(x: np.ndarray, orders: Sequence[float] = DEFAULT_RENYI_ORDERS,
                    bins: int = 16) -> Tuple[float, ...]:
    x = _as_series(x, 64, "renyi_entropies")
    lo, hi = x.min(), x.max()
    if lo == hi:
        raise DegenerateSignal("amplitude histogram of a constant signal")
    counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
    p = counts / x.shape[0]
    return tuple(renyi_entropy(p, q) for q in orders)


# ---------------------------------------------------------------------------
# Per-epoch block
# ---------------------------------------------------------------------------

def channel_features(x: np.ndarray, fs: float, settings: FeatureSettings) -> Dict[str, float]:
    variance, mean_square, mean_p2p = basic_stats(x, settings.p2p_windows)
    _, mobility, complexity = hjorth(x)
    max_psd, peak_freq, integral = ar_psd_features(x, fs, settings.ar_order, psd_grid(*settings.psd_grid))
    values = {
        "variance": variance,
        "mean_p2p": mean_p2p,
        "mean_square": mean_square,
        "mobility": mobility,
        "complexity": complexity,
        "ar_max_psd": max_psd,
        "ar_peak_freq": peak_freq,
        "ar_psd_integral": integral,
        "c0": c0_complexity(x),
        "svden": svd_entropy(x, settings.svd_embedding, settings.svd_delay),
        "spec_ent": spectral_entropy(x, fs, settings.spectral_band),
    }
    renyi = renyi_entropies(x, settings.renyi_orders, settings.renyi_bins)
    for q, value in zip(settings.renyi_orders, renyi):
        values[renyi_feature_name(q)] = value
    return values


def extract_univariate(epoch: Epoch, settings: Optional[FeatureSettings] = None) -> UnivariateBlock:
    settings = settings or FeatureSettings()
    per_channel: Dict[str, Dict[str, float]] = {}
    for row, channel in enumerate(CHANNELS):
        try:
            values = channel_features(epoch.samples[row], epoch.fs, settings)
        except PipelineError as e:
            raise e.add_context(channel=channel, subject=epoch.subject_id, epoch=epoch.epoch_index)
        bad = [name for name, value in values.items() if not np.isfinite(value)]
        if bad:
            raise NonFiniteFeature(f"non-finite {bad[0]}", channel=channel,
                                   subject=epoch.subject_id, epoch=epoch.epoch_index)
        per_channel[channel] = values

    def block(features: Sequence[str]) -> Dict[str, float]:
        return {f"{f}@{c}": per_channel[c][f] for f in features for c in CHANNELS}

    return UnivariateBlock(linear=block(LINEAR_FEATURES),
                           nonlinear=block(nonlinear_features(settings.renyi_orders)))
