"""Energy-threshold labelling checked against a deliberately naive reimplementation."""

from __future__ import annotations

import numpy as np
import pytest

from noisevec import DataError, FeatureMatrix, SadConfig, label_by_energy


def naive_labels(energy, quantile, window):
    """Literal two-pass oracle: sort-based quantile, then windowed majority vote."""
    n = len(energy)
    ordered = np.sort(energy)
    pos = quantile * (n - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    threshold = ordered[lo] + (pos - lo) * (ordered[hi] - ordered[lo])
    raw = [e > threshold for e in energy]
    half = window // 2
    smoothed = []
    for t in range(n):
        votes = raw[max(0, t - half) : min(n, t + half + 1)]
        smoothed.append(sum(votes) * 2 >= len(votes))
    return np.array(smoothed)


class TestAgainstOracle:
    def test_random_inputs(self, rng):
        for _ in range(40):
            t = int(rng.integers(1, 120))
            d = int(rng.integers(1, 5))
            frames = rng.normal(size=(t, d)) * rng.uniform(0.1, 10.0)
            window = int(rng.choice([1, 3, 5, 7, 9]))
            quantile = float(rng.uniform(0.05, 0.95))
            config = SadConfig(speech_quantile=quantile, smoothing_window=window)
            got = label_by_energy(FeatureMatrix(frames), config).speech
            want = naive_labels(frames[:, 0], quantile, window)
            assert np.array_equal(got, want)

    def test_clear_separation(self):
        frames = np.array([[0.0], [0.0], [10.0], [10.0], [10.0]])
        labels = label_by_energy(FeatureMatrix(frames), SadConfig(smoothing_window=1))
        assert labels.to_string() == "NNSSS"

    def test_ties_at_threshold_are_silence(self):
        # every value sits exactly at the quantile, so nothing is strictly above
        frames = np.full((10, 1), 2.5)
        labels = label_by_energy(FeatureMatrix(frames))
        assert not labels.speech.any()

    def test_nondefault_energy_column(self, rng):
        frames = rng.normal(size=(60, 3))
        config = SadConfig(energy_coefficient_index=2, smoothing_window=1)
        got = label_by_energy(FeatureMatrix(frames), config).speech
        want = naive_labels(frames[:, 2], 0.3, 1)
        assert np.array_equal(got, want)


class TestInvariances:
    def test_positive_affine_rescaling(self, rng):
        # quantile thresholding commutes with monotone affine maps of the energy
        frames = rng.normal(size=(80, 2))
        scaled = frames.copy()
        scaled[:, 0] = 4.2 * scaled[:, 0] + 11.0
        base = label_by_energy(FeatureMatrix(frames)).speech
        rescaled = label_by_energy(FeatureMatrix(scaled)).speech
        assert np.array_equal(base, rescaled)

    def test_window_one_is_identity_smoothing(self, rng):
        frames = rng.normal(size=(50, 1))
        raw = label_by_energy(
            FeatureMatrix(frames), SadConfig(smoothing_window=1)
        ).speech
        threshold = np.quantile(frames[:, 0], 0.3)
        assert np.array_equal(raw, frames[:, 0] > threshold)

    def test_smoothing_fills_isolated_gaps(self):
        # a lone low-energy frame inside a long speech run gets voted over
        energy = np.full(21, 10.0)
        energy[:7] = 0.0
        energy[13] = 0.0
        labels = label_by_energy(FeatureMatrix(energy[:, None])).speech
        assert labels[13]

    def test_expected_speech_fraction(self, rng):
        # without smoothing, strictly-above at q=0.3 marks ~70% of distinct values
        frames = rng.normal(size=(1001, 1))
        labels = label_by_energy(
            FeatureMatrix(frames), SadConfig(smoothing_window=1)
        ).speech
        assert labels.sum() == 700


class TestValidation:
    def test_empty_utterance_rejected(self):
        with pytest.raises(DataError, match="empty"):
            label_by_energy(FeatureMatrix(np.zeros((0, 3))))

    def test_energy_index_out_of_range(self):
        with pytest.raises(DataError, match="out of range"):
            label_by_energy(
                FeatureMatrix(np.zeros((4, 2))),
                SadConfig(energy_coefficient_index=2),
            )

    def test_even_window_rejected(self):
        with pytest.raises(DataError, match="odd"):
            SadConfig(smoothing_window=4)

    def test_quantile_bounds_are_strict(self):
        with pytest.raises(DataError):
            SadConfig(speech_quantile=0.0)
        with pytest.raises(DataError):
            SadConfig(speech_quantile=1.0)
