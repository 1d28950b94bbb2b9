import numpy as np
import pytest

from backend.models.signal_models import CHANNELS, DEFAULT_LAYOUT, Hemisphere, Recording
from backend.services.errors import ArityMismatch, InsufficientData, InvalidBand, SignalTooShort
from backend.services.signal_service import (
    bandpass_fir,
    bandpass_kernel,
    epoch_recording,
    fit_taps,
    standardize_apply,
    standardize_fit,
)

FS = 250.0
INTERIOR = slice(251, -251)


def _sine(freq, n=2000, fs=FS):
    return np.sin(2 * np.pi * freq * np.arange(n) / fs)


def test_bandpass_removes_constant():
    out = bandpass_fir(np.full(2000, 3.0), FS, 1.0, 40.0, 251)
    assert np.max(np.abs(out[INTERIOR])) < 1e-6 * 3.0


def test_bandpass_passes_alpha_sine():
    out = bandpass_fir(_sine(10.0), FS, 1.0, 40.0, 251)
    amplitude = np.max(np.abs(out[INTERIOR]))
    assert 0.95 <= amplitude <= 1.05


def test_bandpass_attenuates_line_noise():
    out = bandpass_fir(_sine(60.0), FS, 1.0, 40.0, 251)
    assert np.max(np.abs(out[INTERIOR])) < 0.05


def test_bandpass_is_linear(rng):
    x = rng.normal(size=1500)
    y = rng.normal(size=1500)
    combined = bandpass_fir(2.5 * x - 0.7 * y, FS)
    separate = 2.5 * bandpass_fir(x, FS) - 0.7 * bandpass_fir(y, FS)
    np.testing.assert_allclose(combined, separate, rtol=1e-9, atol=1e-9 * np.max(np.abs(separate)))


def test_bandpass_kernel_has_zero_dc_gain():
    kernel = bandpass_kernel(FS, 1.0, 40.0, 251)
    assert abs(kernel.sum()) < 1e-12


@pytest.mark.parametrize("lo,hi", [(40.0, 1.0), (0.0, 40.0), (1.0, 130.0)])
def test_invalid_band(lo, hi):
    with pytest.raises(InvalidBand):
        bandpass_fir(np.zeros(2000), FS, lo, hi)


def test_signal_shorter_than_kernel():
    with pytest.raises(SignalTooShort):
        bandpass_fir(np.zeros(200), FS, 1.0, 40.0, 251)


def test_fit_taps_keeps_odd_and_short():
    assert fit_taps(500) == 251
    assert fit_taps(125) == 123
    assert fit_taps(126) == 125


def test_epoch_recording_cuts_consecutive_epochs(rng):
    samples = rng.normal(size=(16, 20000))
    rec = Recording(subject_id="S1", label="MDD", fs=FS, samples=samples)
    epochs = epoch_recording(rec, 2.0, 40)
    assert len(epochs) == 40
    assert all(e.samples.shape == (16, 500) for e in epochs)
    assert [e.epoch_index for e in epochs] == list(range(40))
    np.testing.assert_array_equal(np.concatenate([e.samples for e in epochs], axis=1), samples)


def test_epoch_recording_zero_count(rng):
    rec = Recording(subject_id="S1", label="NC", fs=FS, samples=rng.normal(size=(16, 600)))
    assert epoch_recording(rec, 2.0, 0) == []


def test_epoch_recording_insufficient_data(rng):
    rec = Recording(subject_id="S1", label="NC", fs=FS, samples=rng.normal(size=(16, 900)))
    with pytest.raises(InsufficientData) as e:
        epoch_recording(rec, 2.0, 2)
    assert e.value.context["subject"] == "S1"


def test_standardize_simple_column(table_factory):
    params = standardize_fit(table_factory([1.0, 2.0, 3.0]))
    assert params.mean[0] == pytest.approx(2.0)
    assert params.std[0] == pytest.approx(1.0)
    assert standardize_apply(params, table_factory([2.0])).values[0, 0] == pytest.approx(0.0)


@pytest.mark.parametrize("mode", ["zscore", "minmax"])
@pytest.mark.parametrize("value", [5.0, 0.1, 0.3, 1e-7])
def test_standardize_constant_column_maps_to_zero(table_factory, value, mode):
    params = standardize_fit(table_factory([value] * 3), mode=mode)
    assert params.std[0] == 0.0
    assert standardize_apply(params, table_factory([9.0])).values[0, 0] == 0.0


def test_standardize_fitted_matrix(table_factory, rng):
    values = rng.normal(3.0, 2.0, size=(30, 4))
    values[:, 2] = 7.0
    table = table_factory(values)
    out = standardize_apply(standardize_fit(table), table).values
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(out[:, [0, 1, 3]].std(axis=0, ddof=1), 1.0, atol=1e-9)
    refit = standardize_fit(table.with_values(out))
    np.testing.assert_allclose(refit.mean, 0.0, atol=1e-9)


def test_standardize_minmax(table_factory):
    params = standardize_fit(table_factory([0.0, 5.0, 10.0]), mode="minmax")
    out = standardize_apply(params, table_factory([0.0, 10.0, 5.0]))
    np.testing.assert_allclose(out.values[:, 0], [-1.0, 1.0, 0.0])


def test_standardize_arity_mismatch(table_factory):
    params = standardize_fit(table_factory(np.ones((3, 2))))
    with pytest.raises(ArityMismatch):
        standardize_apply(params, table_factory(np.ones((3, 3))))


def test_hemisphere_partition():
    left = DEFAULT_LAYOUT.channels_in(Hemisphere.LEFT)
    right = DEFAULT_LAYOUT.channels_in(Hemisphere.RIGHT)
    assert len(left) == 8 and len(right) == 8
    assert sorted(left + right) == sorted(CHANNELS)
    assert DEFAULT_LAYOUT.canonical_name("FP1") == "Fp1"
