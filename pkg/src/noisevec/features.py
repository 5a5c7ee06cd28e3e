"""Feature matrices, frame labels, manifests, and their on-disk formats.

Formats
-------
binary features (magic ``NVF1``)
    4-byte ASCII magic, uint32-LE frame count, uint32-LE dimension, then
    ``frames * dim`` little-endian float64 values in row-major order.
text features
    header line ``#frames=<T> dim=<d>``, then one line per frame of ``d``
    tab-separated decimals printed with 17 significant digits (enough to
    round-trip any finite float64 exactly).
labels
    a single line of ``S`` (speech) / ``N`` (silence) characters, one per
    frame; a trailing newline is permitted.
manifest
    TSV with two or three columns: utterance id, feature path, optional
    label path.  Utterance ids must be unique.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

NVF1_MAGIC = b"NVF1"
_NVF1_HEADER = struct.Struct("<4sII")

# One line of speech/silence flags, e.g. "SSSNNS".
SPEECH_CHAR = "S"
SILENCE_CHAR = "N"


def format_float(value: float) -> str:
    """Render a float with 17 significant digits (lossless for float64)."""
    return format(float(value), ".17g")


@dataclass(frozen=True)
class FeatureMatrix:
    """A ``T x d`` matrix of per-frame acoustic features for one utterance.

    ``T`` may be zero (an empty utterance); ``d`` must be at least one.  The
    array is validated to be finite and is frozen after construction, so
    instances are safe to share across threads.
    """

    frames: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise DataError("feature dimension must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise DataError("feature matrix contains non-finite values")
        if arr is self.frames and arr.flags.writeable:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SadLabels:
    """Per-frame speech/silence flags; ``speech`` is a boolean vector, True = speech."""

    speech: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.speech)
        if arr.dtype != np.bool_:
            raise DataError(f"labels must be boolean, got dtype {arr.dtype}")
        if arr.ndim != 1:
            raise DataError(f"labels must be 1-D, got shape {arr.shape}")
        if arr is self.speech and arr.flags.writeable:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "speech", arr)

    def __len__(self) -> int:
        return self.speech.shape[0]

    def to_string(self) -> str:
        return "".join(SPEECH_CHAR if s else SILENCE_CHAR for s in self.speech)


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    feature_path: str
    label_path: str | None = None


@dataclass(frozen=True)
class Manifest:
    """An ordered collection of utterance entries; ids are unique."""

    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.utterance_id in seen:
                raise DataError(f"duplicate utterance id {entry.utterance_id!r}")
            seen.add(entry.utterance_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def validate_pair(features: FeatureMatrix, labels: SadLabels) -> None:
    """Raise :class:`DataError` unless the label vector matches the frame count."""
    if len(labels) != features.num_frames:
        raise DataError(
            f"label/feature mismatch: {len(labels)} labels for "
            f"{features.num_frames} frames"
        )


# ---------------------------------------------------------------------------
# feature I/O
# ---------------------------------------------------------------------------

def infer_feature_format(path: str | Path) -> str:
    """``.nvf`` means the binary format; anything else is treated as text."""
    return "binary" if str(path).endswith(".nvf") else "text"


def read_features(path: str | Path, fmt: str = "binary") -> FeatureMatrix:
    """Read a feature matrix; ``fmt`` is ``"binary"`` or ``"text"``."""
    if fmt == "binary":
        return _read_features_binary(path)
    if fmt == "text":
        return _read_features_text(path)
    raise ValueError(f"unknown feature format {fmt!r}")


def write_features(features: FeatureMatrix, path: str | Path, fmt: str = "binary") -> None:
    if fmt == "binary":
        _write_features_binary(features, path)
    elif fmt == "text":
        _write_features_text(features, path)
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def _read_features_binary(path: str | Path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < _NVF1_HEADER.size:
        raise FormatError(
            f"{path}: truncated header, need {_NVF1_HEADER.size} bytes, got {len(data)}"
        )
    magic, num_frames, dim = _NVF1_HEADER.unpack_from(data, 0)
    if magic != NVF1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if dim < 1:
        raise FormatError(f"{path}: dimension must be >= 1, got {dim} at byte 8")
    expected = _NVF1_HEADER.size + 8 * num_frames * dim
    if len(data) != expected:
        raise FormatError(
            f"{path}: payload at byte {_NVF1_HEADER.size} should make the file "
            f"{expected} bytes ({num_frames}x{dim} float64), got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f8", offset=_NVF1_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"{path}: non-finite value at byte {_NVF1_HEADER.size + 8 * i} "
            f"(row {i // dim}, col {i % dim})"
        )
    return FeatureMatrix(values.reshape(num_frames, dim))


def _write_features_binary(features: FeatureMatrix, path: str | Path) -> None:
    header = _NVF1_HEADER.pack(NVF1_MAGIC, features.num_frames, features.dim)
    payload = np.ascontiguousarray(features.frames, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


_TEXT_HEADER_RE = re.compile(r"^#frames=(\d+) dim=(\d+)$")


def _read_features_text(path: str | Path) -> FeatureMatrix:
    lines = Path(path).read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    if not lines:
        raise FormatError(f"{path}: line 1: missing header")
    match = _TEXT_HEADER_RE.match(lines[0])
    if match is None:
        raise FormatError(f"{path}: line 1: expected '#frames=<T> dim=<d>', got {lines[0]!r}")
    num_frames, dim = int(match.group(1)), int(match.group(2))
    if dim < 1:
        raise FormatError(f"{path}: line 1: dimension must be >= 1, got {dim}")
    if len(lines) - 1 != num_frames:
        raise FormatError(
            f"{path}: header promises {num_frames} frame lines, found {len(lines) - 1}"
        )
    out = np.empty((num_frames, dim))
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != dim:
            raise FormatError(f"{path}: line {i}: expected {dim} values, got {len(parts)}")
        for j, token in enumerate(parts):
            try:
                value = float(token)
            except ValueError:
                raise FormatError(
                    f"{path}: line {i}: column {j + 1}: not a number: {token!r}"
                ) from None
            if not np.isfinite(value):
                raise FormatError(f"{path}: line {i}: column {j + 1}: non-finite value")
            out[i - 2, j] = value
    return FeatureMatrix(out)


def _write_features_text(features: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w") as handle:
        handle.write(f"#frames={features.num_frames} dim={features.dim}\n")
        for row in features.frames:
            handle.write("\t".join(format_float(v) for v in row))
            handle.write("\n")


# ---------------------------------------------------------------------------
# label I/O
# ---------------------------------------------------------------------------

def read_labels(path: str | Path, expected_frames: int) -> SadLabels:
    text = Path(path).read_text()
    if text.endswith("\n"):
        text = text[:-1]
    if "\n" in text:
        raise FormatError(f"{path}: line 2: labels must be a single line")
    raw = text.encode("ascii", errors="replace")
    flags = np.frombuffer(raw, dtype="S1")
    bad = np.flatnonzero((flags != b"S") & (flags != b"N"))
    if bad.size:
        pos = int(bad[0])
        raise FormatError(
            f"{path}: illegal label character {text[pos]!r} at position {pos + 1}"
        )
    if len(text) != expected_frames:
        raise DataError(f"{path}: expected {expected_frames} labels, got {len(text)}")
    return SadLabels(flags == b"S")


def write_labels(labels: SadLabels, path: str | Path) -> None:
    Path(path).write_text(labels.to_string() + "\n")


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------

def read_manifest(path: str | Path) -> Manifest:
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(Path(path).read_text().split("\n"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise FormatError(
                f"{path}: line {lineno}: expected 2 or 3 tab-separated columns, "
                f"got {len(parts)}"
            )
        if not parts[0] or not parts[1]:
            raise FormatError(f"{path}: line {lineno}: empty id or feature path")
        label_path = parts[2] if len(parts) == 3 and parts[2] else None
        entries.append(ManifestEntry(parts[0], parts[1], label_path))
    try:
        return Manifest(tuple(entries))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w") as handle:
        for entry in manifest:
            columns = [entry.utterance_id, entry.feature_path]
            if entry.label_path is not None:
                columns.append(entry.label_path)
            handle.write("\t".join(columns) + "\n")


def resolve_path(entry_path: str, base_dir: str | Path) -> Path:
    """Manifest paths are taken relative to the manifest's directory unless absolute."""
    p = Path(entry_path)
    return p if p.is_absolute() else Path(base_dir) / p
