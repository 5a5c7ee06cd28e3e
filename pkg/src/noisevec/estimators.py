"""Per-utterance noise vectors: class-mean estimators and simple baselines.

The noise vector of an utterance is the concatenation of its speech-frame
mean and its silence-frame mean.  When a class has no frames its half of
the vector is zero, which keeps downstream consumers shape-stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import DataError, FormatError
from .features import FeatureMatrix, SadLabels, format_float, validate_pair


@dataclass(frozen=True)
class NoiseVector:
    """Speech and silence mean vectors plus the frame counts behind them."""

    speech_mean: np.ndarray
    silence_mean: np.ndarray
    speech_count: int
    silence_count: int

    def __post_init__(self) -> None:
        sp = np.asarray(self.speech_mean, dtype=np.float64)
        si = np.asarray(self.silence_mean, dtype=np.float64)
        if sp.ndim != 1 or si.ndim != 1 or sp.shape != si.shape:
            raise DataError(
                f"mean vectors must be 1-D and equally sized, got {sp.shape} / {si.shape}"
            )
        if not (np.all(np.isfinite(sp)) and np.all(np.isfinite(si))):
            raise DataError("noise vector contains non-finite values")
        if self.speech_count < 0 or self.silence_count < 0:
            raise DataError("frame counts must be non-negative")
        object.__setattr__(self, "speech_mean", sp)
        object.__setattr__(self, "silence_mean", si)

    @property
    def dim(self) -> int:
        return self.speech_mean.shape[0]

    def concatenated(self) -> np.ndarray:
        """The full 2d vector: speech block first, silence block second."""
        return np.concatenate([self.speech_mean, self.silence_mean])


def offline_noise_vector(features: FeatureMatrix, labels: SadLabels) -> NoiseVector:
    """Whole-utterance class means; an unobserved class yields zeros."""
    validate_pair(features, labels)
    mask = labels.speech
    return NoiseVector(
        speech_mean=_class_mean(features.frames, mask),
        silence_mean=_class_mean(features.frames, ~mask),
        speech_count=int(np.count_nonzero(mask)),
        silence_count=int(np.count_nonzero(~mask)),
    )


def _class_mean(frames: np.ndarray, mask: np.ndarray) -> np.ndarray:
    count = np.count_nonzero(mask)
    if count == 0:
        return np.zeros(frames.shape[1])
    # Sum frames strictly in temporal order (cumsum is sequential, numpy's
    # sum is pairwise for d == 1) so the result is exactly what a streaming
    # accumulator produces and distances between the two paths vanish.
    return np.cumsum(frames[mask], axis=0)[-1] / count


class StreamingMle:
    """Running per-class (sum, count) accumulator over the frames seen so far.

    ``estimate`` divides the running sums by their counts, so after pushing
    a whole utterance the result equals :func:`offline_noise_vector` exactly:
    both sum frames in temporal order.  One instance per utterance; not
    thread-safe.
    """

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise DataError("dimension must be >= 1")
        self.dim = dim
        self._sums = np.zeros((2, dim))  # row 0: speech, row 1: silence
        self._counts = [0, 0]

    def push(self, frame: np.ndarray, is_speech: bool) -> None:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.dim,):
            raise DataError(f"expected frame of shape ({self.dim},), got {frame.shape}")
        row = 0 if is_speech else 1
        self._sums[row] += frame
        self._counts[row] += 1

    def estimate(self) -> NoiseVector:
        means = [
            self._sums[row] / self._counts[row] if self._counts[row] else np.zeros(self.dim)
            for row in (0, 1)
        ]
        return NoiseVector(means[0], means[1], self._counts[0], self._counts[1])


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def utt_mean(features: FeatureMatrix) -> np.ndarray:
    """Mean over all frames, ignoring the speech/silence split."""
    if features.num_frames < 1:
        raise DataError("cannot average an empty utterance")
    return features.frames.mean(axis=0)


def nat_vector(features: FeatureMatrix, edge_frames: int = 10) -> np.ndarray:
    """Mean of the first and last ``edge_frames`` frames (overlap counted once)."""
    if features.num_frames < 1:
        raise DataError("cannot average an empty utterance")
    if edge_frames < 1:
        raise DataError(f"edge_frames must be >= 1, got {edge_frames}")
    idx = np.arange(features.num_frames)
    mask = (idx < edge_frames) | (idx >= features.num_frames - edge_frames)
    return features.frames[mask].mean(axis=0)


def cmn_apply(features: FeatureMatrix) -> FeatureMatrix:
    """Cepstral mean normalization: subtract the utterance mean from every frame."""
    return FeatureMatrix(features.frames - utt_mean(features))


# ---------------------------------------------------------------------------
# noise-vector lines: utt_id, 2d means, speech count, silence count
# ---------------------------------------------------------------------------

def format_noise_vector_line(utterance_id: str, vector: NoiseVector) -> str:
    fields = [utterance_id]
    fields.extend(format_float(v) for v in vector.concatenated())
    fields.append(str(vector.speech_count))
    fields.append(str(vector.silence_count))
    return "\t".join(fields)


def parse_noise_vector_line(line: str) -> tuple[str, NoiseVector]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 5 or (len(parts) - 3) % 2 != 0:
        raise FormatError(
            f"noise-vector line needs id + 2d values + 2 counts, got {len(parts)} fields"
        )
    dim = (len(parts) - 3) // 2
    try:
        values = np.array([float(tok) for tok in parts[1 : 1 + 2 * dim]])
        speech_count = int(parts[-2])
        silence_count = int(parts[-1])
    except ValueError as exc:
        raise FormatError(f"noise-vector line: {exc}") from None
    return parts[0], NoiseVector(values[:dim], values[dim:], speech_count, silence_count)


def write_noise_vectors(pairs: Iterable[tuple[str, NoiseVector]], handle: IO[str]) -> None:
    for utterance_id, vector in pairs:
        handle.write(format_noise_vector_line(utterance_id, vector) + "\n")


def read_noise_vectors(path: str) -> list[tuple[str, NoiseVector]]:
    out = []
    with open(path) as handle:
        for line in handle:
            if line.strip():
                out.append(parse_noise_vector_line(line))
    return out
