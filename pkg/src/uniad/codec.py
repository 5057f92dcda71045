"""Bit-exact binary interchange files.

UFM1 carries one C x H x W float32 feature map, UMS1 one H x W binary mask.
Both are little-endian with a fixed header:

    magic (4 bytes) | version u16 | dtype tag u8 | dims u32 each | payload

UFM1: magic "UFM1", dtype tag 1 (f32-le), dims (C, H, W), payload C*H*W
floats in (c, h, w) row-major order. UMS1: magic "UMS1", dtype tag 2 (u8),
dims (H, W), payload one byte per pixel, values 0 or 1.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

FEATURE_MAGIC = b"UFM1"
MASK_MAGIC = b"UMS1"
CODEC_VERSION = 1
DTYPE_F32 = 1
DTYPE_U8 = 2


class CodecError(Exception):
    """Base class for interchange-file failures."""


class BadMagicError(CodecError):
    pass


class BadVersionError(CodecError):
    pass


class BadDtypeError(CodecError):
    pass


class BadHeaderError(CodecError):
    pass


class TruncationError(CodecError):
    pass


def atomic_write(path: str, payload: bytes) -> None:
    """Write via a temp file and rename, so readers never see partial files."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_features(fmap: np.ndarray, path: str) -> int:
    """Write a (C, H, W) float map as UFM1; returns bytes written."""
    arr = np.asarray(fmap)
    if arr.ndim != 3:
        raise BadHeaderError(f"feature map must be 3-d (C, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise CodecError("refusing to encode non-finite feature values")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    c, h, w = arr.shape
    if max(c, h, w) >= 2 ** 32:
        raise BadHeaderError("dimension exceeds u32 range")
    header = FEATURE_MAGIC + struct.pack("<HBIII", CODEC_VERSION, DTYPE_F32, c, h, w)
    payload = header + arr.tobytes(order="C")
    atomic_write(path, payload)
    return len(payload)


def decode_features(path: str) -> np.ndarray:
    """Read a UFM1 file back into a (C, H, W) float32 array, validating
    magic, version, dtype, and payload length."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise TruncationError(f"file ends at byte {len(blob)}, before the 4-byte magic")
    if blob[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r} at byte 0, expected {FEATURE_MAGIC!r}")
    if len(blob) < 19:
        raise TruncationError(f"file ends at byte {len(blob)}, inside the 19-byte header")
    version, dtype, c, h, w = struct.unpack("<HBIII", blob[4:19])
    if version != CODEC_VERSION:
        raise BadVersionError(f"unsupported version {version} at byte 4, "
                              f"expected {CODEC_VERSION}")
    if dtype != DTYPE_F32:
        raise BadDtypeError(f"unsupported dtype tag {dtype} at byte 6, expected {DTYPE_F32}")
    expected = 19 + 4 * c * h * w
    if len(blob) != expected:
        raise TruncationError(
            f"payload length mismatch: expected {expected} bytes total, got {len(blob)}")
    arr = np.frombuffer(blob, dtype="<f4", offset=19).reshape(c, h, w)
    if not np.all(np.isfinite(arr)):
        raise CodecError(f"non-finite values in payload of {path}")
    return arr.copy()


def encode_mask(mask: np.ndarray, path: str) -> int:
    """Write an (H, W) binary mask as UMS1; returns bytes written."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise BadHeaderError(f"mask must be 2-d (H, W), got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise CodecError("mask values must be 0 or 1")
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    h, w = arr.shape
    header = MASK_MAGIC + struct.pack("<HBII", CODEC_VERSION, DTYPE_U8, h, w)
    payload = header + arr.tobytes(order="C")
    atomic_write(path, payload)
    return len(payload)


def decode_mask(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise TruncationError(f"file ends at byte {len(blob)}, before the 4-byte magic")
    if blob[:4] != MASK_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r} at byte 0, expected {MASK_MAGIC!r}")
    if len(blob) < 15:
        raise TruncationError(f"file ends at byte {len(blob)}, inside the 15-byte header")
    version, dtype, h, w = struct.unpack("<HBII", blob[4:15])
    if version != CODEC_VERSION:
        raise BadVersionError(f"unsupported version {version} at byte 4")
    if dtype != DTYPE_U8:
        raise BadDtypeError(f"unsupported dtype tag {dtype} at byte 6, expected {DTYPE_U8}")
    expected = 15 + h * w
    if len(blob) != expected:
        raise TruncationError(
            f"payload length mismatch: expected {expected} bytes total, got {len(blob)}")
    arr = np.frombuffer(blob, dtype=np.uint8, offset=15).reshape(h, w)
    if not np.isin(arr, (0, 1)).all():
        raise CodecError(f"mask payload of {path} holds values other than 0/1")
    return arr.copy()


def read_header(path: str) -> dict:
    """Peek at a UFM1/UMS1 header without loading the payload."""
    with open(path, "rb") as f:
        head = f.read(19)
    if len(head) < 4:
        raise TruncationError(f"file ends at byte {len(head)}")
    magic = head[:4]
    if magic == FEATURE_MAGIC:
        version, dtype, c, h, w = struct.unpack("<HBIII", head[4:19])
        return {"kind": "features", "magic": magic.decode(), "version": version,
                "dtype": "f32-le", "dims": (c, h, w)}
    if magic == MASK_MAGIC:
        version, dtype, h, w = struct.unpack("<HBII", head[4:15])
        return {"kind": "mask", "magic": magic.decode(), "version": version,
                "dtype": "u8", "dims": (h, w)}
    raise BadMagicError(f"bad magic {magic!r} at byte 0")
