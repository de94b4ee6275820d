"""Tests for the wavelet filter bank and subband features."""
import numpy as np
import pytest

from koopman_ecg.errors import WaveletSpecError
from koopman_ecg.models import WaveletFamily, WaveletSpec
from koopman_ecg.services.wavelet import (
    LOG_ENERGY_FLOOR,
    dwt,
    idwt,
    max_level,
    wavelet_feature_names,
    wavelet_window_features,
)

HAAR_1 = WaveletSpec(family=WaveletFamily.haar, levels=1)


def test_haar_single_level_example():
    decomp = dwt([1.0, 1.0, 1.0, 1.0], HAAR_1)
    assert np.allclose(decomp.approx, [np.sqrt(2), np.sqrt(2)])
    assert np.allclose(decomp.details[0], [0.0, 0.0])

    features = wavelet_window_features([1.0, 1.0, 1.0, 1.0], HAAR_1).reshape(2, 4)
    assert features[0] == pytest.approx([np.log(4.0), np.sqrt(2), 0.0, np.sqrt(2)])
    assert features[1] == pytest.approx([np.log(LOG_ENERGY_FLOOR), 0.0, 0.0, 0.0])


def test_perfect_reconstruction_on_ecg_windows(normal_windows):
    spec = WaveletSpec()
    for window in normal_windows:
        decomp = dwt(window, spec)
        assert len(decomp.details) == 4
        assert np.max(np.abs(idwt(decomp, spec) - window)) < 1e-10


@pytest.mark.parametrize("family", list(WaveletFamily))
def test_perfect_reconstruction_random_windows(rng, family):
    spec = WaveletSpec(family=family, levels=4)
    for _ in range(100):
        x = rng.normal(size=250)
        assert np.max(np.abs(idwt(dwt(x, spec), spec) - x)) < 1e-10


@pytest.mark.parametrize("family", list(WaveletFamily))
def test_energy_preserved_on_dyadic_length(rng, family):
    spec = WaveletSpec(family=family, levels=4)
    for _ in range(100):
        x = rng.normal(size=256)
        energy = sum(float(np.sum(band**2)) for band in dwt(x, spec).subbands)
        assert abs(energy - float(np.sum(x**2))) <= 1e-9 * float(np.sum(x**2))


def test_db4_annihilates_cubic_in_interior():
    t = np.linspace(0.0, 1.0, 256)
    decomp = dwt(t**3 - 0.5 * t**2 + t, WaveletSpec(family=WaveletFamily.db4, levels=1))
    finest = decomp.details[-1]
    assert np.max(np.abs(finest[4:-4])) < 1e-10


def test_zero_window_features_use_energy_floor():
    features = wavelet_window_features(np.zeros(250), WaveletSpec()).reshape(5, 4)
    assert np.all(features[:, 0] == np.log(LOG_ENERGY_FLOOR))
    assert np.all(features[:, 1:] == 0.0)


def test_features_scale_with_amplitude(normal_windows):
    spec = WaveletSpec()
    base = wavelet_window_features(normal_windows[0], spec).reshape(5, 4)
    scaled = wavelet_window_features(3.0 * normal_windows[0], spec).reshape(5, 4)
    assert np.allclose(scaled[:, 0], base[:, 0] + 2 * np.log(3.0))
    assert np.allclose(scaled[:, 1:], 3.0 * base[:, 1:])


def test_feature_count_follows_levels(normal_windows):
    spec = WaveletSpec(levels=3)
    assert wavelet_window_features(normal_windows[0], spec).shape == (16,)
    assert len(wavelet_feature_names(3)) == 16
    assert wavelet_feature_names(1)[:2] == ["band_0_logE", "band_0_mean"]


def test_invalid_specs_raise():
    assert max_level(250, WaveletSpec()) == 5
    with pytest.raises(WaveletSpecError):
        dwt(np.zeros(250), WaveletSpec(levels=6))
    with pytest.raises(WaveletSpecError):
        dwt(np.zeros(4), WaveletSpec())
    decomp = dwt(np.zeros(250), WaveletSpec())
    with pytest.raises(WaveletSpecError):
        idwt(decomp, WaveletSpec(levels=3))
