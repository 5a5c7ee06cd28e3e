"""File-format fidelity and validation errors for features, labels, manifests."""

from __future__ import annotations

import numpy as np
import pytest

from noisevec import (
    DataError,
    FeatureMatrix,
    FormatError,
    Manifest,
    ManifestEntry,
    SadLabels,
    read_features,
    read_labels,
    read_manifest,
    write_features,
    write_labels,
    write_manifest,
)
from noisevec.features import format_float, infer_feature_format, validate_pair


def awkward_floats(rng, shape):
    """Values spanning many exponents, the worst case for decimal round-trips."""
    mantissa = rng.normal(size=shape)
    exponent = rng.integers(-12, 13, size=shape).astype(float)
    values = mantissa * 10.0**exponent
    values.flat[:: max(1, values.size // 7)] = 0.0  # sprinkle exact zeros
    return values


class TestBinaryFormat:
    def test_round_trip_bitwise(self, rng, tmp_path):
        for case in range(25):
            t = int(rng.integers(0, 40))
            d = int(rng.integers(1, 9))
            original = FeatureMatrix(awkward_floats(rng, (t, d)))
            path = tmp_path / f"case{case}.nvf"
            write_features(original, path, fmt="binary")
            loaded = read_features(path, fmt="binary")
            assert np.array_equal(loaded.frames, original.frames)
            # writing the loaded copy reproduces the file byte for byte
            path2 = tmp_path / f"case{case}b.nvf"
            write_features(loaded, path2, fmt="binary")
            assert path.read_bytes() == path2.read_bytes()

    def test_header_arithmetic(self, tmp_path):
        # magic(4) + frames(4) + dim(4) + one float64 payload(8)
        path = tmp_path / "single.nvf"
        write_features(FeatureMatrix(np.array([[3.5]])), path, fmt="binary")
        data = path.read_bytes()
        assert len(data) == 20
        assert data[:4] == b"NVF1"
        assert np.frombuffer(data, dtype="<u4", count=2, offset=4).tolist() == [1, 1]
        assert np.frombuffer(data, dtype="<f8", offset=12)[0] == 3.5

    def test_zero_frames_is_valid(self, tmp_path):
        path = tmp_path / "empty.nvf"
        write_features(FeatureMatrix(np.zeros((0, 4))), path, fmt="binary")
        loaded = read_features(path, fmt="binary")
        assert loaded.num_frames == 0
        assert loaded.dim == 4

    def test_bad_magic_names_offset(self, tmp_path):
        path = tmp_path / "bad.nvf"
        path.write_bytes(b"XXXX" + b"\x00" * 8)
        with pytest.raises(FormatError, match="byte 0"):
            read_features(path, fmt="binary")

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.nvf"
        write_features(FeatureMatrix(np.ones((3, 2))), path, fmt="binary")
        full = path.read_bytes()
        path.write_bytes(full[:-5])
        with pytest.raises(FormatError, match="byte 12"):
            read_features(path, fmt="binary")

    def test_non_finite_payload_names_position(self, tmp_path):
        path = tmp_path / "nan.nvf"
        write_features(FeatureMatrix(np.ones((2, 2))), path, fmt="binary")
        data = bytearray(path.read_bytes())
        data[12 + 8 * 3 : 12 + 8 * 4] = np.array([np.nan]).tobytes()
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match=r"row 1, col 1"):
            read_features(path, fmt="binary")


class TestTextFormat:
    def test_round_trip_bitwise(self, rng, tmp_path):
        for case in range(25):
            t = int(rng.integers(0, 30))
            d = int(rng.integers(1, 7))
            original = FeatureMatrix(awkward_floats(rng, (t, d)))
            path = tmp_path / f"case{case}.txt"
            write_features(original, path, fmt="text")
            loaded = read_features(path, fmt="text")
            assert np.array_equal(loaded.frames, original.frames)
            path2 = tmp_path / f"case{case}b.txt"
            write_features(loaded, path2, fmt="text")
            assert path.read_bytes() == path2.read_bytes()

    def test_header_line(self, tmp_path):
        path = tmp_path / "t.txt"
        write_features(FeatureMatrix(np.array([[1.0, 2.0]])), path, fmt="text")
        assert path.read_text().splitlines()[0] == "#frames=1 dim=2"

    def test_missing_header(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("1.0\t2.0\n")
        with pytest.raises(FormatError, match="line 1"):
            read_features(path, fmt="text")

    def test_row_count_mismatch(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("#frames=2 dim=1\n1.0\n")
        with pytest.raises(FormatError, match="promises 2"):
            read_features(path, fmt="text")

    def test_bad_token_names_line_and_column(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("#frames=1 dim=2\n1.0\tabc\n")
        with pytest.raises(FormatError, match="line 2: column 2"):
            read_features(path, fmt="text")

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("#frames=1 dim=1\ninf\n")
        with pytest.raises(FormatError, match="non-finite"):
            read_features(path, fmt="text")

    def test_format_float_is_lossless(self, rng):
        values = awkward_floats(rng, 500)
        for v in values:
            assert float(format_float(v)) == v


class TestLabels:
    def test_round_trip(self, rng, tmp_path):
        for case in range(20):
            t = int(rng.integers(0, 50))
            labels = SadLabels(rng.random(t) < 0.5)
            path = tmp_path / f"case{case}.lab"
            write_labels(labels, path)
            loaded = read_labels(path, expected_frames=t)
            assert np.array_equal(loaded.speech, labels.speech)

    def test_trailing_newline_permitted(self, tmp_path):
        path = tmp_path / "l.lab"
        path.write_text("SNS")
        assert read_labels(path, 3).to_string() == "SNS"
        path.write_text("SNS\n")
        assert read_labels(path, 3).to_string() == "SNS"

    def test_illegal_character_position(self, tmp_path):
        path = tmp_path / "l.lab"
        path.write_text("SSxN\n")
        with pytest.raises(FormatError, match="position 3"):
            read_labels(path, 4)

    def test_length_mismatch(self, tmp_path):
        path = tmp_path / "l.lab"
        path.write_text("SN\n")
        with pytest.raises(DataError, match="expected 3"):
            read_labels(path, 3)

    def test_pair_validation(self):
        features = FeatureMatrix(np.zeros((3, 2)))
        with pytest.raises(DataError, match="mismatch"):
            validate_pair(features, SadLabels(np.array([True, False])))


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = Manifest(
            (
                ManifestEntry("a", "feats/a.nvf", "labels/a.lab"),
                ManifestEntry("b", "feats/b.nvf"),
            )
        )
        path = tmp_path / "m.tsv"
        write_manifest(manifest, path)
        loaded = read_manifest(path)
        assert loaded.entries == manifest.entries

    def test_empty_file_is_empty_manifest(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("")
        assert len(read_manifest(path)) == 0

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("a\tx.nvf\na\ty.nvf\n")
        with pytest.raises(DataError, match="duplicate"):
            read_manifest(path)

    def test_column_count_checked(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("only-one-column\n")
        with pytest.raises(FormatError, match="line 1"):
            read_manifest(path)

    def test_format_inference(self):
        assert infer_feature_format("x/y.nvf") == "binary"
        assert infer_feature_format("x/y.txt") == "text"


class TestFeatureMatrixValidation:
    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            FeatureMatrix(np.array([[np.inf]]))

    def test_rejects_zero_dim(self):
        with pytest.raises(DataError):
            FeatureMatrix(np.zeros((3, 0)))

    def test_immutable_after_construction(self):
        source = np.ones((2, 2))
        features = FeatureMatrix(source)
        source[0, 0] = 99.0  # caller keeps its own copy
        assert features.frames[0, 0] == 1.0
        with pytest.raises(ValueError):
            features.frames[0, 0] = 5.0
