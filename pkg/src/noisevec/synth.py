"""Synthetic corpora drawn from the coupled-means generative model.

Reproducibility contract: every utterance owns an independent Philox stream
keyed by ``(seed, utterance_index)``, so a corpus is bit-identical across
runs and across any parallel/sequential split, and inserting an utterance
never perturbs the others.  Gaussians come from the plain trigonometric
Box-Muller transform applied to the stream's uniform doubles (rather than a
generator-specific normal algorithm), which keeps fixtures reproducible in
other environments that implement Philox.

Per-utterance draw order: segment labels, silence mean, speech mean, frame
noise in frame order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .features import (
    FeatureMatrix,
    Manifest,
    ManifestEntry,
    SadLabels,
    format_float,
    write_features,
    write_labels,
    write_manifest,
)
from .map_model import NoisePrior, _spd_inverse


@dataclass(frozen=True)
class SynthConfig:
    """Everything needed to draw a corpus: the prior, the true scaling
    factors applied to the frame precisions, sizes, and label dynamics."""

    prior: NoisePrior
    num_utterances: int
    frames_per_utterance: int
    r_speech: float = 1.0
    r_silence: float = 1.0
    speech_fraction: float = 0.5
    segment_mean_length: float = 20.0
    seed: int = 42

    def __post_init__(self) -> None:
        if self.num_utterances < 0:
            raise DataError("num_utterances must be >= 0")
        if self.frames_per_utterance < 0:
            raise DataError("frames_per_utterance must be >= 0")
        for name in ("r_speech", "r_silence"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DataError(f"{name} must be finite and > 0, got {value}")
        if not 0.0 < self.speech_fraction < 1.0:
            raise DataError(
                f"speech_fraction must be strictly between 0 and 1, got {self.speech_fraction}"
            )
        if self.segment_mean_length < 1:
            raise DataError("segment_mean_length must be >= 1")


def _utterance_rng(seed: int, utterance_index: int) -> np.random.Generator:
    """Independent, reproducible stream for one utterance."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, utterance_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Box-Muller pairs from uniform doubles; interleaved cos/sin outputs."""
    m = (n + 1) // 2
    u1 = rng.random(m)
    u2 = rng.random(m)
    radius = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 in (0, 1], so the log is finite
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * m)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n]


def _sample_segment_labels(
    rng: np.random.Generator, total: int, speech_fraction: float, mean_length: float
) -> np.ndarray:
    """Alternating speech/silence segments with geometric lengths.

    Segment means are skewed by class (speech segments longer when
    ``speech_fraction > 0.5``) so the long-run speech fraction matches
    ``speech_fraction`` while the overall mean segment length stays at
    ``mean_length``.
    """
    if total == 0:
        return np.zeros(0, dtype=bool)
    means = {
        True: max(1.0, 2.0 * speech_fraction * mean_length),
        False: max(1.0, 2.0 * (1.0 - speech_fraction) * mean_length),
    }
    out = np.empty(total, dtype=bool)
    is_speech = bool(rng.random() < speech_fraction)
    filled = 0
    while filled < total:
        u = rng.random()
        mean = means[is_speech]
        if mean <= 1.0:
            length = 1
        else:
            q = 1.0 / mean
            length = max(1, int(np.ceil(np.log1p(-u) / np.log1p(-q))))
        end = min(total, filled + length)
        out[filled:end] = is_speech
        filled = end
        is_speech = not is_speech
    return out


@dataclass(frozen=True)
class _CovFactors:
    """Lower Cholesky factors of the class covariances (precisions inverted once)."""

    speech: np.ndarray
    silence: np.ndarray


def _covariance_factors(prior: NoisePrior) -> _CovFactors:
    return _CovFactors(
        speech=np.linalg.cholesky(_spd_inverse(prior.speech_precision, "speech precision")),
        silence=np.linalg.cholesky(
            _spd_inverse(prior.silence_precision, "silence precision")
        ),
    )


def sample_utterance(
    config: SynthConfig, utterance_index: int
) -> tuple[FeatureMatrix, SadLabels, np.ndarray]:
    """Draw one utterance; returns features, labels, and the true stacked means."""
    return _sample_utterance(config, utterance_index, _covariance_factors(config.prior))


def _sample_utterance(
    config: SynthConfig, utterance_index: int, factors: _CovFactors
) -> tuple[FeatureMatrix, SadLabels, np.ndarray]:
    rng = _utterance_rng(config.seed, utterance_index)
    prior = config.prior
    d = prior.dim
    total = config.frames_per_utterance

    speech_mask = _sample_segment_labels(
        rng, total, config.speech_fraction, config.segment_mean_length
    )
    silence_mean = prior.silence_mean + factors.silence @ _standard_normal(rng, d)
    speech_mean = (
        prior.speech_offset
        + prior.coupling @ silence_mean
        + factors.speech @ _standard_normal(rng, d)
    )
    noise = _standard_normal(rng, total * d).reshape(total, d)
    frames = np.empty((total, d))
    frames[speech_mask] = (
        speech_mean + (noise[speech_mask] @ factors.speech.T) / np.sqrt(config.r_speech)
    )
    frames[~speech_mask] = (
        silence_mean + (noise[~speech_mask] @ factors.silence.T) / np.sqrt(config.r_silence)
    )
    true_means = np.concatenate([speech_mean, silence_mean])
    return FeatureMatrix(frames), SadLabels(speech_mask), true_means


def iter_utterances(config: SynthConfig):
    """Yield ``(utterance_id, features, labels, true_means)`` without touching disk."""
    factors = _covariance_factors(config.prior)
    for index in range(config.num_utterances):
        features, labels, true_means = _sample_utterance(config, index, factors)
        yield _utterance_id(index), features, labels, true_means


def _utterance_id(index: int) -> str:
    return f"utt{index:05d}"


def sample_corpus(config: SynthConfig, out_dir: str | Path) -> Manifest:
    """Write a corpus directory: features, labels, manifest, and ground truth.

    Layout: ``feats/<id>.nvf`` (binary features), ``labels/<id>.lab``,
    ``manifest.tsv`` with paths relative to the directory, and ``truth.tsv``
    with one row per utterance: id, true speech mean, true silence mean, and
    the scaling factors used for the frame noise.
    """
    out_dir = Path(out_dir)
    (out_dir / "feats").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    with open(out_dir / "truth.tsv", "w") as truth:
        for utterance_id, features, labels, true_means in iter_utterances(config):
            feat_rel = f"feats/{utterance_id}.nvf"
            label_rel = f"labels/{utterance_id}.lab"
            write_features(features, out_dir / feat_rel, fmt="binary")
            write_labels(labels, out_dir / label_rel)
            fields = [utterance_id]
            fields.extend(format_float(v) for v in true_means)
            fields.append(format_float(config.r_speech))
            fields.append(format_float(config.r_silence))
            truth.write("\t".join(fields) + "\n")
            entries.append(ManifestEntry(utterance_id, feat_rel, label_rel))
    manifest = Manifest(tuple(entries))
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


def read_ground_truth(path: str | Path) -> list[tuple[str, np.ndarray, float, float]]:
    """Rows of ``truth.tsv``: (utterance_id, stacked true means, r_speech, r_silence)."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().split("\n"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 5 or (len(parts) - 3) % 2 != 0:
            raise FormatError(
                f"{path}: line {lineno}: expected id + 2d means + 2 scaling factors, "
                f"got {len(parts)} fields"
            )
        try:
            values = np.array([float(tok) for tok in parts[1:-2]])
            r_speech = float(parts[-2])
            r_silence = float(parts[-1])
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from None
        rows.append((parts[0], values, r_speech, r_silence))
    return rows
