"""UFM1/UMS1 byte-level contract: round trips and strict validation."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniad.codec import (
    BadDtypeError,
    BadMagicError,
    BadVersionError,
    CodecError,
    TruncationError,
    decode_features,
    decode_mask,
    encode_features,
    encode_mask,
    read_header,
)


class TestFeatureRoundTrip:
    def test_full_scale_map_round_trips_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        fmap = rng.standard_normal((272, 14, 14)).astype(np.float32)
        path = str(tmp_path / "x.ufm")
        encode_features(fmap, path)
        back = decode_features(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, fmap)

    def test_unit_payload_bytes(self, tmp_path):
        path = str(tmp_path / "one.ufm")
        n = encode_features(np.array([[[1.0]]], dtype=np.float32), path)
        blob = open(path, "rb").read()
        assert len(blob) == n == 19 + 4
        assert blob[:4] == b"UFM1"
        assert blob[19:] == bytes([0x00, 0x00, 0x80, 0x3F])  # IEEE-754 LE 1.0

    def test_header_layout(self, tmp_path):
        path = str(tmp_path / "h.ufm")
        encode_features(np.zeros((3, 2, 5), dtype=np.float32), path)
        blob = open(path, "rb").read()
        version, dtype, c, h, w = struct.unpack("<HBIII", blob[4:19])
        assert (version, dtype, c, h, w) == (1, 1, 3, 2, 5)
        assert read_header(path)["dims"] == (3, 2, 5)

    @settings(max_examples=25, deadline=None)
    @given(c=st.integers(1, 64), h=st.integers(1, 12), w=st.integers(1, 12),
           seed=st.integers(0, 2 ** 31 - 1))
    def test_round_trip_property(self, tmp_path_factory, c, h, w, seed):
        rng = np.random.default_rng(seed)
        fmap = (rng.standard_normal((c, h, w)) * 100).astype(np.float32)
        path = str(tmp_path_factory.mktemp("codec") / "p.ufm")
        encode_features(fmap, path)
        assert np.array_equal(decode_features(path), fmap)

    def test_non_finite_rejected_on_encode(self, tmp_path):
        bad = np.full((1, 1, 1), np.inf, dtype=np.float32)
        with pytest.raises(CodecError):
            encode_features(bad, str(tmp_path / "bad.ufm"))

    def test_upper_bound_shape_round_trips(self, tmp_path):
        rng = np.random.default_rng(9)
        fmap = rng.standard_normal((512, 32, 32)).astype(np.float32)
        path = str(tmp_path / "big.ufm")
        encode_features(fmap, path)
        assert np.array_equal(decode_features(path), fmap)


class TestFeatureValidation:
    def _write(self, tmp_path, blob):
        path = str(tmp_path / "f.ufm")
        with open(path, "wb") as f:
            f.write(blob)
        return path

    def test_truncated_payload_reports_lengths(self, tmp_path):
        good = tmp_path / "good.ufm"
        encode_features(np.ones((2, 3, 4), dtype=np.float32), str(good))
        blob = open(good, "rb").read()
        path = self._write(tmp_path, blob[:-5])
        with pytest.raises(TruncationError, match=rf"expected {19 + 96} bytes.*{19 + 91}"):
            decode_features(path)

    def test_bad_magic(self, tmp_path):
        path = self._write(tmp_path, b"NOPE" + bytes(15))
        with pytest.raises(BadMagicError, match="byte 0"):
            decode_features(path)

    def test_bad_version(self, tmp_path):
        blob = b"UFM1" + struct.pack("<HBIII", 9, 1, 1, 1, 1) + bytes(4)
        with pytest.raises(BadVersionError):
            decode_features(self._write(tmp_path, blob))

    def test_bad_dtype_tag(self, tmp_path):
        blob = b"UFM1" + struct.pack("<HBIII", 1, 7, 1, 1, 1) + bytes(4)
        with pytest.raises(BadDtypeError):
            decode_features(self._write(tmp_path, blob))

    def test_trailing_garbage_rejected(self, tmp_path):
        good = tmp_path / "good.ufm"
        encode_features(np.ones((1, 1, 1), dtype=np.float32), str(good))
        blob = open(good, "rb").read() + b"xx"
        with pytest.raises(TruncationError):
            decode_features(self._write(tmp_path, blob))

    def test_no_temp_files_left_behind(self, tmp_path):
        encode_features(np.ones((1, 1, 1), dtype=np.float32), str(tmp_path / "a.ufm"))
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a.ufm"]


class TestMasks:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        mask = (rng.random((32, 32)) < 0.2).astype(np.uint8)
        path = str(tmp_path / "m.ums")
        encode_mask(mask, path)
        assert np.array_equal(decode_mask(path), mask)
        assert read_header(path)["kind"] == "mask"

    def test_non_binary_values_rejected(self, tmp_path):
        with pytest.raises(CodecError):
            encode_mask(np.full((2, 2), 3, dtype=np.uint8), str(tmp_path / "m.ums"))

    def test_wrong_magic_for_kind(self, tmp_path):
        fpath = str(tmp_path / "f.ufm")
        encode_features(np.ones((1, 1, 1), dtype=np.float32), fpath)
        with pytest.raises(BadMagicError):
            decode_mask(fpath)
