"""Writers for the UFM1/UMS1 interchange formats and the dataset manifest.

Deliberately independent of the consumer-side codec: the byte contract
(little-endian, magic + u16 version + dtype tag + u32 dims + raw payload)
is implemented twice and verified by a cross-component round-trip test.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

FEATURE_MAGIC = b"UFM1"
MASK_MAGIC = b"UMS1"
VERSION = 1
DTYPE_F32 = 1
DTYPE_U8 = 2


class ExportFormatError(Exception):
    pass


def _atomic_write(path: str, payload: bytes) -> None:
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


def write_features(fmap: np.ndarray, path: str) -> None:
    """(C, H, W) float map -> UFM1 file, (c, h, w) row-major f32 LE payload."""
    if fmap.ndim != 3:
        raise ExportFormatError(f"expected (C, H, W), got shape {fmap.shape}")
    if not np.all(np.isfinite(fmap)):
        raise ExportFormatError("refusing to write non-finite features")
    arr = np.ascontiguousarray(fmap, dtype="<f4")
    c, h, w = arr.shape
    header = FEATURE_MAGIC + struct.pack("<HBIII", VERSION, DTYPE_F32, c, h, w)
    _atomic_write(path, header + arr.tobytes(order="C"))


def write_mask(mask: np.ndarray, path: str) -> None:
    """(H, W) binary mask -> UMS1 file, one byte per pixel."""
    if mask.ndim != 2:
        raise ExportFormatError(f"expected (H, W), got shape {mask.shape}")
    arr = (np.asarray(mask) > 0).astype(np.uint8)
    h, w = arr.shape
    header = MASK_MAGIC + struct.pack("<HBII", VERSION, DTYPE_U8, h, w)
    _atomic_write(path, header + arr.tobytes(order="C"))


def write_manifest(path: str, c_org: int, grid: tuple[int, int],
                   image_size: tuple[int, int], samples: list[dict],
                   generator: dict) -> None:
    doc = {
        "version": 1,
        "grid": {"c_org": c_org, "h": grid[0], "w": grid[1]},
        "image_size": list(image_size),
        "generator": generator,
        "samples": samples,
    }
    _atomic_write(path, json.dumps(doc, indent=1).encode("utf-8"))
