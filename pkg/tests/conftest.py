"""Shared builders for randomized tests.

Everything is driven by explicitly seeded generators so the suite is
deterministic; "random" here means "arbitrary but reproducible".
"""

from __future__ import annotations

import numpy as np
import pytest

from noisevec import FeatureMatrix, NoisePrior, SadLabels


def random_spd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    """Symmetric positive definite with eigenvalues bounded well away from 0."""
    a = rng.normal(size=(dim, dim))
    return scale * (a @ a.T / dim + np.eye(dim))


def random_prior(rng: np.random.Generator, dim: int, coupling_scale: float = 0.4) -> NoisePrior:
    return NoisePrior(
        silence_mean=rng.normal(scale=2.0, size=dim),
        speech_offset=rng.normal(scale=2.0, size=dim),
        coupling=coupling_scale * rng.normal(size=(dim, dim)) / np.sqrt(dim),
        speech_precision=random_spd(rng, dim),
        silence_precision=random_spd(rng, dim),
        r_speech=float(rng.uniform(0.5, 2.0)),
        r_silence=float(rng.uniform(0.5, 2.0)),
    )


def random_utterance(
    rng: np.random.Generator, num_frames: int, dim: int
) -> tuple[FeatureMatrix, SadLabels]:
    """Arbitrary frames with a random (possibly one-sided) label pattern."""
    features = FeatureMatrix(rng.normal(scale=1.5, size=(num_frames, dim)))
    labels = SadLabels(rng.random(num_frames) < rng.uniform(0.2, 0.8))
    return features, labels


def labelled_utterance(
    rng: np.random.Generator, speech_frames: int, silence_frames: int, dim: int,
    speech_shift: float = 0.0,
) -> tuple[FeatureMatrix, SadLabels]:
    """Utterance with exact per-class frame counts (speech block first)."""
    speech = rng.normal(size=(speech_frames, dim)) + speech_shift
    silence = rng.normal(size=(silence_frames, dim))
    features = FeatureMatrix(np.vstack([speech, silence]))
    labels = SadLabels(np.array([True] * speech_frames + [False] * silence_frames))
    return features, labels


def training_corpus(
    rng: np.random.Generator, dim: int, num_utterances: int, frames_per_class: int = 25
) -> list[tuple[FeatureMatrix, SadLabels]]:
    """Corpus whose utterances all qualify for prior training."""
    corpus = []
    for _ in range(num_utterances):
        center = rng.normal(scale=3.0, size=2 * dim)
        speech = center[:dim] + rng.normal(size=(frames_per_class, dim))
        silence = center[dim:] + rng.normal(size=(frames_per_class, dim))
        features = FeatureMatrix(np.vstack([speech, silence]))
        labels = SadLabels(
            np.array([True] * frames_per_class + [False] * frames_per_class)
        )
        corpus.append((features, labels))
    return corpus


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
