import numpy as np
import pytest
from scipy import signal as sp_signal

from backend.models.config_models import FeatureSettings
from backend.models.signal_models import CHANNELS, Epoch
from backend.services.errors import DegenerateSignal, InvalidDistribution, SignalTooShort
from backend.services.univariate_service import (
    ar_psd_features,
    basic_stats,
    burg,
    c0_complexity,
    extract_univariate,
    hjorth,
    linear_feature_names,
    nonlinear_feature_names,
    psd_grid,
    renyi_entropies,
    renyi_entropy,
    spectral_entropy,
    svd_entropy,
)

FS = 250.0


def _sine(freq, n=500):
    return np.sin(2 * np.pi * freq * np.arange(n) / FS)


def test_basic_stats_constant():
    variance, mean_square, mean_p2p = basic_stats(np.ones(500))
    assert variance == 0.0
    assert mean_square == 1.0
    assert mean_p2p == 0.0


def test_basic_stats_sine():
    variance, mean_square, mean_p2p = basic_stats(_sine(10.0))
    assert variance == pytest.approx(0.5, abs=0.005)
    assert mean_square == pytest.approx(0.5, abs=1e-9)
    assert mean_p2p == pytest.approx(2.0, abs=0.01)


def test_basic_stats_alternating():
    variance, mean_square, _ = basic_stats(np.tile([0.0, 2.0], 250))
    assert mean_square == pytest.approx(2.0)
    assert variance == pytest.approx(500 / 499)


def test_hjorth_sine():
    activity, mobility, complexity = hjorth(_sine(10.0))
    assert activity == pytest.approx(0.5, abs=0.005)
    assert mobility == pytest.approx(2 * np.sin(np.pi * 10 / FS), rel=1e-2)
    assert complexity == pytest.approx(1.0, abs=0.01)


def test_hjorth_constant_is_degenerate():
    with pytest.raises(DegenerateSignal):
        hjorth(np.full(100, 4.0))


def test_hjorth_white_noise_is_complex(rng):
    complexities = [hjorth(rng.normal(size=500))[2] for _ in range(20)]
    assert np.mean(complexities) > 1.0


def test_ar_peak_of_alpha_sine(rng):
    x = _sine(10.0) + 0.05 * rng.normal(size=500)
    _, peak_freq, _ = ar_psd_features(x, FS, order=10)
    assert 9.5 <= peak_freq <= 10.5


def test_ar_features_scale_quadratically(rng):
    x = _sine(10.0) + 0.3 * rng.normal(size=500)
    max_psd, peak, integral = ar_psd_features(x, FS)
    max_psd3, peak3, integral3 = ar_psd_features(3.0 * x, FS)
    assert max_psd3 == pytest.approx(9.0 * max_psd, rel=1e-9)
    assert integral3 == pytest.approx(9.0 * integral, rel=1e-9)
    assert peak3 == peak


def test_ar_integral_of_white_noise(rng):
    grid = psd_grid(0.0, FS / 2, 0.5)
    ratios = []
    for _ in range(20):
        x = rng.normal(size=500)
        _, _, integral = ar_psd_features(x, FS, order=10, grid=grid)
        ratios.append(integral / np.mean(x * x))
    assert np.mean(ratios) == pytest.approx(1.0, abs=0.25)


def test_burg_recovers_ar2(rng):
    x = sp_signal.lfilter([1.0], [1.0, -0.75, 0.5], rng.normal(size=5000))
    a, error = burg(x, 2)
    np.testing.assert_allclose(a, [1.0, -0.75, 0.5], rtol=0.1)
    assert error == pytest.approx(1.0, rel=0.1)


def test_burg_needs_samples():
    with pytest.raises(SignalTooShort):
        burg(np.arange(15.0), 10)


def test_spectral_entropy_of_bin_centred_tone():
    assert spectral_entropy(_sine(10.0), FS) < 0.25


def test_spectral_entropy_of_white_noise(rng):
    assert spectral_entropy(rng.normal(size=4000), FS) > 0.9


def test_spectral_entropy_is_scale_invariant(rng):
    x = rng.normal(size=500)
    assert spectral_entropy(7.0 * x, FS) == pytest.approx(spectral_entropy(x, FS), abs=1e-9)


def test_svd_entropy_of_sine():
    # Period of 20 samples matches the embedding dimension: two equal singular values.
    assert svd_entropy(_sine(12.5), 20, 1) == pytest.approx(np.log(2) / np.log(20), abs=1e-3)


def test_svd_entropy_of_white_noise(rng):
    assert svd_entropy(rng.normal(size=500)) > 0.8


def test_svd_entropy_is_scale_invariant(rng):
    x = rng.normal(size=500)
    assert svd_entropy(0.01 * x) == pytest.approx(svd_entropy(x), abs=1e-9)


def test_c0_of_bin_centred_sine_is_zero():
    assert c0_complexity(_sine(10.0)) < 1e-6


def test_c0_white_noise_exceeds_sine(rng):
    values = [c0_complexity(rng.normal(size=500)) for _ in range(30)]
    assert np.mean(values) > 0.2
    assert np.mean(values) > c0_complexity(_sine(10.0)) + 0.2


def test_c0_is_scale_invariant(rng):
    x = rng.normal(size=500)
    assert c0_complexity(4.0 * x) == pytest.approx(c0_complexity(x), abs=1e-9)


@pytest.mark.parametrize("q", [0.5, 2.0, 3.0])
def test_renyi_uniform_distribution(q):
    assert renyi_entropy(np.full(16, 1 / 16), q) == pytest.approx(np.log(16))


@pytest.mark.parametrize("q", [0.5, 2.0, 3.0])
def test_renyi_point_mass(q):
    p = np.zeros(16)
    p[3] = 1.0
    assert renyi_entropy(p, q) == 0.0


def test_renyi_collision_entropy_matches_histogram(rng):
    x = rng.normal(size=500)
    counts, _ = np.histogram(x, bins=16, range=(x.min(), x.max()))
    p = counts / x.shape[0]
    (value,) = renyi_entropies(x, (2.0,), 16)
    assert value == pytest.approx(-np.log(np.sum(p ** 2)), rel=1e-12)


def test_renyi_rejects_bad_input():
    with pytest.raises(InvalidDistribution):
        renyi_entropy(np.array([0.5, 0.6]), 2.0)
    with pytest.raises(InvalidDistribution):
        renyi_entropy(np.array([0.5, 0.5]), 1.0)


def test_extract_univariate_dimensions(noise_epoch):
    block = extract_univariate(noise_epoch())
    assert len(block.linear) == 128
    assert len(block.nonlinear) == 96
    assert list(block.linear) == linear_feature_names()
    assert list(block.nonlinear) == nonlinear_feature_names()
    assert all(np.isfinite(v) for v in block.values.values())
    assert all(v >= 0 for v in block.nonlinear.values())


def test_extract_univariate_names_constant_channel(noise_epoch):
    epoch = noise_epoch()
    samples = epoch.samples.copy()
    samples[CHANNELS.index("C3")] = 2.0
    with pytest.raises(DegenerateSignal) as e:
        extract_univariate(epoch.model_copy(update={"samples": samples}))
    assert e.value.context["channel"] == "C3"
    assert e.value.context["subject"] == "S1"


def test_extract_univariate_is_deterministic(rng):
    samples = rng.normal(size=(16, 500))
    a = Epoch(subject_id="A", label="NC", samples=samples)
    b = Epoch(subject_id="B", label="NC", samples=samples.copy())
    assert extract_univariate(a) == extract_univariate(b)


def test_custom_renyi_orders(noise_epoch):
    settings = FeatureSettings(renyi_orders=(0.5, 2.0, 4.0))
    block = extract_univariate(noise_epoch(), settings)
    assert "renyi_q4@Fp1" in block.nonlinear
