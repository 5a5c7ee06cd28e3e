"""Condition feature frames on a noise vector through an affine map.

The control layer feeds each frame together with the utterance's noise
vector through one affine transform: ``y_t = W @ [x_t; speech; silence] + b``.
The default map simply appends the noise vector to every frame, which is the
usual way to hand the conditioning signal to a downstream acoustic model.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .estimators import NoiseVector
from .features import FeatureMatrix, format_float
from .map_model import _LineCursor

_AFFINE_META_RE = re.compile(r"^\[meta\] rows=(\d+) cols=(\d+)$")


@dataclass(frozen=True)
class AffineMap:
    """Weights of shape ``(d_out, 3d)`` and a bias of shape ``(d_out,)``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if weights.ndim != 2:
            raise DataError(f"weights must be 2-D, got shape {weights.shape}")
        if weights.shape[1] % 3 != 0 or weights.shape[1] == 0:
            raise DataError(
                f"weights must have 3d columns for some d >= 1, got {weights.shape[1]}"
            )
        if bias.shape != (weights.shape[0],):
            raise DataError(
                f"bias must have shape ({weights.shape[0]},), got {bias.shape}"
            )
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise DataError("affine map contains non-finite values")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def input_dim(self) -> int:
        """Per-frame feature dimension ``d`` the map expects."""
        return self.weights.shape[1] // 3

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]


def identity_append(dim: int) -> AffineMap:
    """The default map: pass the frame through and append both mean vectors."""
    if dim < 1:
        raise DataError("dimension must be >= 1")
    return AffineMap(np.eye(3 * dim), np.zeros(3 * dim))


def apply_control_layer(
    features: FeatureMatrix, vector: NoiseVector, affine: AffineMap | None = None
) -> FeatureMatrix:
    """Transform every frame jointly with the utterance's noise vector.

    The per-frame input to the affine map is the frame with the speech and
    silence means appended; the noise vector is constant across frames, so
    its contribution folds into a single bias term.
    """
    if vector.dim != features.dim:
        raise DataError(
            f"noise vector dimension {vector.dim} != feature dimension {features.dim}"
        )
    if affine is None:
        affine = identity_append(features.dim)
    if affine.input_dim != features.dim:
        raise DataError(
            f"affine map expects dimension {affine.input_dim}, features have {features.dim}"
        )
    d = features.dim
    frame_part = features.frames @ affine.weights[:, :d].T
    constant = (
        affine.weights[:, d : 2 * d] @ vector.speech_mean
        + affine.weights[:, 2 * d :] @ vector.silence_mean
        + affine.bias
    )
    return FeatureMatrix(frame_part + constant)


# ---------------------------------------------------------------------------
# file format (magic NVAFFINE1, same sectioned-text style as the prior file)
# ---------------------------------------------------------------------------

def write_affine(affine: AffineMap, path: str | Path) -> None:
    with open(path, "w") as handle:
        handle.write("NVAFFINE1\n")
        handle.write(f"[meta] rows={affine.output_dim} cols={affine.weights.shape[1]}\n")
        handle.write("[weights]\n")
        for row in affine.weights:
            handle.write("\t".join(format_float(v) for v in row) + "\n")
        handle.write("[bias]\n")
        handle.write("\t".join(format_float(v) for v in affine.bias) + "\n")


def read_affine(path: str | Path) -> AffineMap:
    lines = Path(path).read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    cursor = _LineCursor(path, lines)
    if cursor.take() != "NVAFFINE1":
        raise FormatError(f"{path}: line 1: expected magic 'NVAFFINE1'")
    meta = _AFFINE_META_RE.match(cursor.take())
    if meta is None:
        raise FormatError(f"{path}: line 2: malformed [meta] line")
    rows, cols = int(meta.group(1)), int(meta.group(2))
    weights = cursor.matrix("weights", rows, cols)
    bias = cursor.matrix("bias", 1, rows)[0]
    cursor.expect_end()
    return AffineMap(weights, bias)
