"""Convergence traces, label-noise sweeps, estimator comparisons, TSV output."""

from __future__ import annotations

import io

import numpy as np
import pytest

from noisevec import (
    DataError,
    FeatureMatrix,
    NoisePrior,
    SadLabels,
    SynthConfig,
    iter_utterances,
    offline_noise_vector,
)
from noisevec.evaluation import (
    METHOD_MAP,
    METHOD_MLE,
    compare_estimators,
    convergence_summary,
    default_coefficient_indices,
    index_at_fraction,
    label_noise_sweep,
    trace_convergence,
    write_comparison_tsv,
    write_convergence_tsv,
    write_sweep_tsv,
    write_trajectory_tsv,
)
from conftest import random_prior, random_utterance


def separated_prior(dim=2):
    """Prior whose speech and silence means sit well apart."""
    return NoisePrior(
        silence_mean=np.zeros(dim),
        speech_offset=np.full(dim, 3.0),
        coupling=np.zeros((dim, dim)),
        speech_precision=np.eye(dim),
        silence_precision=np.eye(dim),
    )


def synth_corpus_with_truth(prior, num_utterances, frames, seed):
    config = SynthConfig(
        prior,
        num_utterances=num_utterances,
        frames_per_utterance=frames,
        r_speech=prior.r_speech,
        r_silence=prior.r_silence,
        seed=seed,
    )
    return [
        (features, labels, truth)
        for _, features, labels, truth in iter_utterances(config)
    ]


class TestTraceConvergence:
    def test_mle_lands_on_offline(self, rng):
        for _ in range(10):
            features, labels = random_utterance(rng, int(rng.integers(1, 80)), 3)
            trajectory = trace_convergence(features, labels, METHOD_MLE)
            assert trajectory.num_frames == features.num_frames
            assert trajectory.distances[-1] <= 1e-10
            assert (trajectory.distances >= 0).all()

    def test_estimates_are_streaming_snapshots(self, rng):
        features, labels = random_utterance(rng, 25, 2)
        trajectory = trace_convergence(features, labels, METHOD_MLE)
        # snapshot after t+1 frames equals the offline vector of that prefix
        for t in (0, 10, 24):
            prefix = offline_noise_vector(
                FeatureMatrix(features.frames[: t + 1]), SadLabels(labels.speech[: t + 1])
            )
            np.testing.assert_allclose(
                trajectory.estimates[t], prefix.concatenated(), rtol=1e-12, atol=1e-14
            )

    def test_all_speech_silence_half_stays_zero(self, rng):
        frames = FeatureMatrix(rng.normal(size=(20, 2)) + 4.0)
        labels = SadLabels(np.ones(20, dtype=bool))
        trajectory = trace_convergence(frames, labels, METHOD_MLE)
        np.testing.assert_array_equal(trajectory.estimates[:, 2:], np.zeros((20, 2)))
        np.testing.assert_array_equal(trajectory.offline[2:], np.zeros(2))

    def test_map_needs_prior(self, rng):
        features, labels = random_utterance(rng, 10, 2)
        with pytest.raises(DataError, match="prior"):
            trace_convergence(features, labels, METHOD_MAP)

    def test_unknown_method(self, rng):
        features, labels = random_utterance(rng, 10, 2)
        with pytest.raises(DataError, match="unknown method"):
            trace_convergence(features, labels, "median")

    def test_map_distance_shrinks_with_context(self, rng):
        prior = random_prior(rng, 2)
        corpus = synth_corpus_with_truth(prior, 30, 80, seed=99)
        early, mid = [], []
        for features, labels, _ in corpus:
            trajectory = trace_convergence(features, labels, METHOD_MAP, prior=prior)
            t = trajectory.num_frames
            early.append(trajectory.distances[index_at_fraction(t, 0.1)])
            mid.append(trajectory.distances[index_at_fraction(t, 0.5)])
        assert np.median(mid) < np.median(early)


class TestFractionIndex:
    def test_exact_positions(self):
        assert index_at_fraction(10, 0.1) == 0
        assert index_at_fraction(10, 0.5) == 4
        assert index_at_fraction(10, 1.0) == 9
        assert index_at_fraction(10, 0.0) == 0  # at least one frame
        assert index_at_fraction(1, 0.5) == 0
        assert index_at_fraction(3, 0.34) == 1

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            index_at_fraction(0, 0.5)


class TestDefaultCoefficients:
    def test_forty_dims_gives_classic_indices(self):
        assert default_coefficient_indices(40) == (15, 35, 55, 75)

    def test_tiny_dims_collapse(self):
        assert default_coefficient_indices(1) == (0, 1)
        assert default_coefficient_indices(2) == (0, 1, 2, 3)

    def test_indices_in_range(self):
        for dim in (1, 2, 3, 8, 40, 64):
            for index in default_coefficient_indices(dim):
                assert 0 <= index < 2 * dim


class TestLabelNoiseSweep:
    def test_zero_probability_is_exactly_zero(self, rng):
        corpus = [random_utterance(rng, 30, 2) for _ in range(5)]
        points = label_noise_sweep(corpus, [0.0])
        assert points[0].mean_distance == 0.0
        assert points[0].num_utterances == 5

    def test_deterministic_given_seed(self, rng):
        corpus = [random_utterance(rng, 30, 2) for _ in range(5)]
        first = label_noise_sweep(corpus, [0.1, 0.3], seed=5)
        second = label_noise_sweep(corpus, [0.1, 0.3], seed=5)
        assert [p.mean_distance for p in first] == [p.mean_distance for p in second]

    def test_damage_grows_with_flip_probability(self):
        prior = separated_prior(2)
        config = SynthConfig(prior, num_utterances=60, frames_per_utterance=100, seed=31)
        corpus = [(f, l) for _, f, l, _ in iter_utterances(config)]
        points = label_noise_sweep(corpus, [0.0, 0.05, 0.1, 0.2], seed=7)
        distances = [p.mean_distance for p in points]
        assert distances == sorted(distances)

    def test_bad_probability(self, rng):
        corpus = [random_utterance(rng, 10, 1)]
        with pytest.raises(DataError, match="probability"):
            label_noise_sweep(corpus, [1.5])

    def test_empty_corpus(self):
        with pytest.raises(DataError, match="at least one"):
            label_noise_sweep([], [0.1])


class TestCompareEstimators:
    def test_row_order_and_names(self, rng):
        prior = random_prior(rng, 2)
        corpus = synth_corpus_with_truth(prior, 5, 40, seed=1)
        rows = compare_estimators(corpus, prior)
        assert [r.method for r in rows] == [
            "utt-mean",
            "nat",
            "offline",
            "mle-25",
            "mle-50",
            "mle-100",
            "map-25",
            "map-50",
            "map-100",
        ]

    def test_full_prefix_mle_equals_offline(self, rng):
        prior = random_prior(rng, 2)
        corpus = synth_corpus_with_truth(prior, 8, 50, seed=2)
        rows = {r.method: r for r in compare_estimators(corpus, prior)}
        assert rows["mle-100"].mse_speech == rows["offline"].mse_speech
        assert rows["mle-100"].mse_silence == rows["offline"].mse_silence

    def test_class_split_beats_pooled_mean_when_separated(self):
        prior = separated_prior(2)
        corpus = synth_corpus_with_truth(prior, 40, 60, seed=3)
        rows = {r.method: r for r in compare_estimators(corpus, prior)}
        assert rows["offline"].mse_speech < rows["utt-mean"].mse_speech
        assert rows["offline"].mse_silence < rows["utt-mean"].mse_silence

    def test_prior_shrinkage_helps_short_prefixes(self, rng):
        prior = random_prior(rng, 2)
        corpus = synth_corpus_with_truth(prior, 50, 80, seed=4)
        rows = {r.method: r for r in compare_estimators(corpus, prior)}
        map_err = rows["map-25"].mse_speech + rows["map-25"].mse_silence
        mle_err = rows["mle-25"].mse_speech + rows["mle-25"].mse_silence
        assert map_err < mle_err

    def test_truth_shape_checked(self, rng):
        features, labels = random_utterance(rng, 10, 2)
        with pytest.raises(DataError, match="true means"):
            compare_estimators([(features, labels, np.zeros(3))], random_prior(rng, 2))

    def test_empty_corpus(self, rng):
        with pytest.raises(DataError, match="at least one"):
            compare_estimators([], random_prior(rng, 1))


class TestConvergenceSummary:
    def test_rows_match_trajectories(self, rng):
        corpus = []
        for i in range(3):
            features, labels = random_utterance(rng, 40, 2)
            corpus.append((f"utt{i}", features, labels))
        rows = convergence_summary(corpus)
        assert [r.utterance_id for r in rows] == ["utt0", "utt1", "utt2"]
        for row, (_, features, labels) in zip(rows, corpus):
            trajectory = trace_convergence(features, labels)
            assert row.num_frames == 40
            assert row.distance_early == trajectory.distances[3]
            assert row.distance_mid == trajectory.distances[19]
            assert row.distance_final == trajectory.distances[39]
            assert row.distance_final <= 1e-10


class TestTsvWriters:
    def test_trajectory_header_and_subsampling(self, rng):
        features, labels = random_utterance(rng, 10, 2)
        trajectory = trace_convergence(features, labels)
        buffer = io.StringIO()
        write_trajectory_tsv(trajectory, buffer, coefficient_indices=(0, 3), every=3)
        lines = buffer.getvalue().splitlines()
        assert lines[0] == "frame_index\tcoeff_0\tcoeff_3\toffline_0\toffline_3"
        # frames 3, 6, 9 (1-based multiples of three) plus the final frame
        assert [row.split("\t")[0] for row in lines[1:]] == ["2", "5", "8", "9"]
        final = lines[-1].split("\t")
        assert float(final[1]) == trajectory.estimates[9, 0]
        assert float(final[3]) == trajectory.offline[0]

    def test_trajectory_index_bounds(self, rng):
        features, labels = random_utterance(rng, 5, 1)
        trajectory = trace_convergence(features, labels)
        with pytest.raises(DataError, match="out of range"):
            write_trajectory_tsv(trajectory, io.StringIO(), coefficient_indices=(2,))

    def test_sweep_rows(self, rng):
        corpus = [random_utterance(rng, 20, 1) for _ in range(3)]
        points = label_noise_sweep(corpus, [0.0, 0.5], seed=3)
        buffer = io.StringIO()
        write_sweep_tsv(points, buffer)
        lines = buffer.getvalue().splitlines()
        assert lines[0] == "flip_probability\tmean_distance\tnum_utterances"
        assert len(lines) == 3
        assert lines[1].split("\t") == ["0", "0", "3"]

    def test_comparison_rows_parse_back(self, rng):
        prior = random_prior(rng, 1)
        corpus = synth_corpus_with_truth(prior, 3, 30, seed=6)
        rows = compare_estimators(corpus, prior)
        buffer = io.StringIO()
        write_comparison_tsv(rows, buffer)
        lines = buffer.getvalue().splitlines()
        assert lines[0] == "method\tmse_speech\tmse_silence"
        for line, row in zip(lines[1:], rows):
            name, speech, silence = line.split("\t")
            assert name == row.method
            assert float(speech) == row.mse_speech
            assert float(silence) == row.mse_silence

    def test_convergence_rows(self, rng):
        features, labels = random_utterance(rng, 30, 2)
        rows = convergence_summary([("u0", features, labels)])
        buffer = io.StringIO()
        write_convergence_tsv(rows, buffer)
        lines = buffer.getvalue().splitlines()
        assert (
            lines[0]
            == "utterance_id\tnum_frames\tdistance_early\tdistance_mid\tdistance_final"
        )
        fields = lines[1].split("\t")
        assert fields[0] == "u0"
        assert fields[1] == "30"
