"""Convergence traces, label-noise robustness, and estimator comparisons.

Everything here reduces to delimited rows: callers (including the CLI)
decide whether to render them.  Distances are Euclidean over the stacked
``[speech; silence]`` vector; accuracy against a synthetic corpus is the
mean squared error to the generating class means, reported separately per
class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DataError
from .estimators import (
    NoiseVector,
    StreamingMle,
    nat_vector,
    offline_noise_vector,
    utt_mean,
)
from .features import FeatureMatrix, SadLabels, format_float, validate_pair
from .map_model import (
    NoisePrior,
    R_POLICY_FIXED_ONE,
    StreamingMap,
    accumulate_stats,
    map_estimate,
)

METHOD_MLE = "mle"
METHOD_MAP = "map"


@dataclass(frozen=True)
class Trajectory:
    """Per-frame streaming estimates and their distance to the full-utterance
    class means (the reference an estimator should converge to)."""

    estimates: np.ndarray  # (T, 2d)
    distances: np.ndarray  # (T,)
    offline: np.ndarray  # (2d,)

    def __post_init__(self) -> None:
        est = np.asarray(self.estimates, dtype=np.float64)
        dist = np.asarray(self.distances, dtype=np.float64)
        ref = np.asarray(self.offline, dtype=np.float64)
        if est.ndim != 2 or ref.ndim != 1 or est.shape[1] != ref.size:
            raise DataError(
                f"estimates {est.shape} do not line up with reference {ref.shape}"
            )
        if dist.shape != (est.shape[0],):
            raise DataError(f"need one distance per frame, got {dist.shape}")
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "distances", dist)
        object.__setattr__(self, "offline", ref)

    @property
    def num_frames(self) -> int:
        return self.estimates.shape[0]


def trace_convergence(
    features: FeatureMatrix,
    labels: SadLabels,
    method: str = METHOD_MLE,
    prior: NoisePrior | None = None,
    r_policy: str = R_POLICY_FIXED_ONE,
    em_every: int = 100,
) -> Trajectory:
    """Run a streaming estimator frame by frame and record every estimate.

    The reference is the whole-utterance class-mean vector, so the streaming
    point estimator lands on it exactly at the final frame, while the MAP
    variant keeps some shrinkage toward the prior.
    """
    validate_pair(features, labels)
    if method == METHOD_MLE:
        streaming = StreamingMle(features.dim)
    elif method == METHOD_MAP:
        if prior is None:
            raise DataError("method 'map' requires a prior")
        streaming = StreamingMap(prior, r_policy=r_policy, em_every=em_every)
    else:
        raise DataError(f"unknown method {method!r}, expected 'mle' or 'map'")
    reference = offline_noise_vector(features, labels).concatenated()
    estimates = np.empty((features.num_frames, 2 * features.dim))
    distances = np.empty(features.num_frames)
    for t in range(features.num_frames):
        streaming.push(features.frames[t], bool(labels.speech[t]))
        estimate = streaming.estimate().concatenated()
        estimates[t] = estimate
        distances[t] = float(np.linalg.norm(estimate - reference))
    return Trajectory(estimates, distances, reference)


def index_at_fraction(num_frames: int, fraction: float) -> int:
    """Frame index after observing ``ceil(fraction * T)`` frames (at least one)."""
    if num_frames < 1:
        raise DataError("empty trajectory has no fractional index")
    prefix = int(np.ceil(fraction * num_frames))
    return int(np.clip(prefix, 1, num_frames)) - 1


def default_coefficient_indices(dim: int) -> tuple[int, ...]:
    """Stacked-vector coefficients to plot: up to two per class, spread out.

    Picks 3/8 and 7/8 of the way into each class block, which lands on the
    conventional (15, 35, 55, 75) for 40-dimensional features; tiny
    dimensions collapse to fewer distinct indices.
    """
    per_class = sorted({(3 * dim) // 8, (7 * dim) // 8})
    return tuple(i for i in per_class) + tuple(dim + i for i in per_class)


# ---------------------------------------------------------------------------
# label-noise robustness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    flip_probability: float
    mean_distance: float
    num_utterances: int


def label_noise_sweep(
    corpus: Sequence[tuple[FeatureMatrix, SadLabels]],
    flip_probabilities: Sequence[float],
    method: str = METHOD_MLE,
    prior: NoisePrior | None = None,
    seed: int = 42,
) -> list[SweepPoint]:
    """Flip each label independently with probability p and measure the damage.

    For every probability the corpus is re-estimated with the corrupted
    labels and the mean distance to the clean-label vectors is reported.
    Flips are drawn from a generator seeded once per call, so the sweep is
    reproducible.  Note that flipping changes which class each frame feeds,
    so at p = 1 the two halves of the vector swap entirely.
    """
    if not corpus:
        raise DataError("label_noise_sweep needs at least one utterance")
    rng = np.random.default_rng(seed)
    points = []
    for p in flip_probabilities:
        if not 0.0 <= p <= 1.0:
            raise DataError(f"flip probability must be in [0, 1], got {p}")
        total = 0.0
        for features, labels in corpus:
            clean = _full_utterance_vector(features, labels, method, prior)
            if p == 0.0:
                noisy = clean
            else:
                flips = rng.random(len(labels)) < p
                corrupted = SadLabels(labels.speech ^ flips)
                noisy = _full_utterance_vector(features, corrupted, method, prior)
            total += float(np.linalg.norm(clean - noisy))
        points.append(SweepPoint(float(p), total / len(corpus), len(corpus)))
    return points


def _full_utterance_vector(
    features: FeatureMatrix,
    labels: SadLabels,
    method: str,
    prior: NoisePrior | None,
) -> np.ndarray:
    if method == METHOD_MLE:
        return offline_noise_vector(features, labels).concatenated()
    if method == METHOD_MAP:
        if prior is None:
            raise DataError("method 'map' requires a prior")
        stats = accumulate_stats(features, labels)
        return map_estimate(stats, prior, prior.scaling).mean
    raise DataError(f"unknown method {method!r}, expected 'mle' or 'map'")


# ---------------------------------------------------------------------------
# estimator comparison against synthetic ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    method: str
    mse_speech: float
    mse_silence: float


def compare_estimators(
    corpus: Sequence[tuple[FeatureMatrix, SadLabels, np.ndarray]],
    prior: NoisePrior,
    fractions: Sequence[float] = (0.25, 0.5, 1.0),
    edge_frames: int = 10,
) -> list[ComparisonRow]:
    """Mean squared error of each estimator against the generating means.

    ``corpus`` rows carry the stacked true means alongside the data.  The
    whole-frame mean and the edge-frame mean are single vectors compared to
    both halves of the truth; the class-mean estimators are also evaluated
    on prefixes (streaming snapshots) at the requested fractions.  The MAP
    prefixes use the corpus-level scaling factors of the prior.
    """
    if not corpus:
        raise DataError("compare_estimators needs at least one utterance")
    methods: list[str] = ["utt-mean", "nat"]
    methods.append("offline")
    methods.extend(f"mle-{int(round(f * 100))}" for f in fractions)
    methods.extend(f"map-{int(round(f * 100))}" for f in fractions)
    sq_speech = dict.fromkeys(methods, 0.0)
    sq_silence = dict.fromkeys(methods, 0.0)

    for features, labels, true_means in corpus:
        d = features.dim
        if true_means.shape != (2 * d,):
            raise DataError(
                f"true means must have shape ({2 * d},), got {true_means.shape}"
            )
        true_speech, true_silence = true_means[:d], true_means[d:]

        whole = utt_mean(features)
        sq_speech["utt-mean"] += _mse(whole, true_speech)
        sq_silence["utt-mean"] += _mse(whole, true_silence)
        edges = nat_vector(features, edge_frames)
        sq_speech["nat"] += _mse(edges, true_speech)
        sq_silence["nat"] += _mse(edges, true_silence)

        full = offline_noise_vector(features, labels)
        sq_speech["offline"] += _mse(full.speech_mean, true_speech)
        sq_silence["offline"] += _mse(full.silence_mean, true_silence)

        for fraction in fractions:
            upto = index_at_fraction(features.num_frames, fraction) + 1
            prefix_feats = FeatureMatrix(features.frames[:upto])
            prefix_labels = SadLabels(labels.speech[:upto])
            tag = int(round(fraction * 100))

            mle = offline_noise_vector(prefix_feats, prefix_labels)
            sq_speech[f"mle-{tag}"] += _mse(mle.speech_mean, true_speech)
            sq_silence[f"mle-{tag}"] += _mse(mle.silence_mean, true_silence)

            stats = accumulate_stats(prefix_feats, prefix_labels)
            posterior = map_estimate(stats, prior, prior.scaling)
            sq_speech[f"map-{tag}"] += _mse(posterior.speech_mean, true_speech)
            sq_silence[f"map-{tag}"] += _mse(posterior.silence_mean, true_silence)

    n = len(corpus)
    return [ComparisonRow(m, sq_speech[m] / n, sq_silence[m] / n) for m in methods]


def _mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean((estimate - truth) ** 2))


# ---------------------------------------------------------------------------
# per-corpus convergence summary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceRow:
    utterance_id: str
    num_frames: int
    distance_early: float  # after a tenth of the frames
    distance_mid: float  # after half of the frames
    distance_final: float


def convergence_summary(
    corpus: Sequence[tuple[str, FeatureMatrix, SadLabels]],
    method: str = METHOD_MLE,
    prior: NoisePrior | None = None,
    r_policy: str = R_POLICY_FIXED_ONE,
) -> list[ConvergenceRow]:
    """Distances to the full-utterance vector at a tenth, half, and all frames."""
    rows = []
    for utterance_id, features, labels in corpus:
        trajectory = trace_convergence(features, labels, method, prior, r_policy)
        t = trajectory.num_frames
        rows.append(
            ConvergenceRow(
                utterance_id,
                t,
                float(trajectory.distances[index_at_fraction(t, 0.1)]),
                float(trajectory.distances[index_at_fraction(t, 0.5)]),
                float(trajectory.distances[t - 1]),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# TSV writers (one-line header, tab-separated, 17-significant-digit floats)
# ---------------------------------------------------------------------------

def write_trajectory_tsv(
    trajectory: Trajectory,
    handle: IO[str],
    coefficient_indices: Sequence[int],
    every: int = 1,
) -> None:
    """Plot-ready rows: frame index, chosen coefficients of the running
    estimate, and the same coefficients of the reference vector."""
    if every < 1:
        raise DataError(f"every must be >= 1, got {every}")
    width = trajectory.estimates.shape[1]
    for index in coefficient_indices:
        if not 0 <= index < width:
            raise DataError(
                f"coefficient index {index} out of range for stacked width {width}"
            )
    header = ["frame_index"]
    header.extend(f"coeff_{i}" for i in coefficient_indices)
    header.extend(f"offline_{i}" for i in coefficient_indices)
    handle.write("\t".join(header) + "\n")
    for t in range(trajectory.num_frames):
        if (t + 1) % every != 0 and t != trajectory.num_frames - 1:
            continue
        fields = [str(t)]
        fields.extend(format_float(trajectory.estimates[t, i]) for i in coefficient_indices)
        fields.extend(format_float(trajectory.offline[i]) for i in coefficient_indices)
        handle.write("\t".join(fields) + "\n")


def write_sweep_tsv(points: Iterable[SweepPoint], handle: IO[str]) -> None:
    handle.write("flip_probability\tmean_distance\tnum_utterances\n")
    for point in points:
        handle.write(
            f"{format_float(point.flip_probability)}\t"
            f"{format_float(point.mean_distance)}\t{point.num_utterances}\n"
        )


def write_comparison_tsv(rows: Iterable[ComparisonRow], handle: IO[str]) -> None:
    handle.write("method\tmse_speech\tmse_silence\n")
    for row in rows:
        handle.write(
            f"{row.method}\t{format_float(row.mse_speech)}\t"
            f"{format_float(row.mse_silence)}\n"
        )


def write_convergence_tsv(rows: Iterable[ConvergenceRow], handle: IO[str]) -> None:
    handle.write(
        "utterance_id\tnum_frames\tdistance_early\tdistance_mid\tdistance_final\n"
    )
    for row in rows:
        handle.write(
            f"{row.utterance_id}\t{row.num_frames}\t"
            f"{format_float(row.distance_early)}\t{format_float(row.distance_mid)}\t"
            f"{format_float(row.distance_final)}\n"
        )
