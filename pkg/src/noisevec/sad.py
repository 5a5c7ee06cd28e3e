"""Energy-quantile speech activity detection.

A deliberately simple fallback for corpora that ship without frame labels:
a frame is called speech when its energy coefficient strictly exceeds a low
quantile of the utterance's energy values, and the raw decisions are then
majority-smoothed over a short window.  Externally supplied labels should
always be preferred when available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .features import FeatureMatrix, SadLabels


@dataclass(frozen=True)
class SadConfig:
    """Knobs for :func:`label_by_energy`.

    speech_quantile
        Quantile of the energy coefficient used as the speech threshold
        (computed with linear interpolation between order statistics).
    smoothing_window
        Width of the majority vote; must be odd.  Window 1 disables smoothing.
    energy_coefficient_index
        Which feature coefficient carries energy (0 for typical MFCC c0).
    """

    speech_quantile: float = 0.3
    smoothing_window: int = 5
    energy_coefficient_index: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.speech_quantile < 1.0:
            raise DataError(f"speech_quantile must be in (0, 1), got {self.speech_quantile}")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise DataError(f"smoothing_window must be odd and >= 1, got {self.smoothing_window}")
        if self.energy_coefficient_index < 0:
            raise DataError("energy_coefficient_index must be >= 0")


def label_by_energy(features: FeatureMatrix, config: SadConfig = SadConfig()) -> SadLabels:
    """Classify each frame as speech or silence from its energy coefficient.

    A frame is speech when its energy strictly exceeds the configured
    quantile of the utterance's energies, so a constant utterance comes out
    all-silence.  Decisions are then smoothed by majority vote over a
    centered window (clipped at the utterance edges; ties go to speech).
    """
    if features.num_frames < 1:
        raise DataError("cannot run energy SAD on an empty utterance")
    if config.energy_coefficient_index >= features.dim:
        raise DataError(
            f"energy coefficient {config.energy_coefficient_index} out of range "
            f"for dimension {features.dim}"
        )
    energy = features.frames[:, config.energy_coefficient_index]
    threshold = np.quantile(energy, config.speech_quantile)
    raw = energy > threshold
    return SadLabels(_majority_smooth(raw, config.smoothing_window))


def _majority_smooth(raw: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return raw.copy()
    half = window // 2
    votes = np.asarray(raw, dtype=np.int64)
    # cumulative-sum trick: window vote count in O(T)
    prefix = np.concatenate(([0], np.cumsum(votes)))
    n = len(raw)
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    in_window = prefix[hi] - prefix[lo]
    size = hi - lo
    # ties (possible only in clipped edge windows) resolve to speech
    return 2 * in_window >= size
