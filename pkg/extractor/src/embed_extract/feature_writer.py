"""Writer for the QBEF binary feature container.

This harness only ever writes files; the format below is the sole contract
with the search engine that consumes them. Writes are atomic
(temp-then-rename) so a crashed extraction never leaves a partial file.

Layout (little-endian): magic ``QBEF`` | version u16=1 | reserved u16=0 |
frame_rate_hz f32 | n_frames u32 | dim u32 | source_id u16 length + UTF-8 |
layer i16 (-1 = none) | payload n_frames x dim f32 row-major.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"QBEF"
FORMAT_VERSION = 1

_FIXED_HEADER = struct.Struct("<4sHHfII")


def encode_feature_file(
    frames: np.ndarray,
    frame_rate_hz: float,
    source_id: str,
    layer: int | None,
) -> bytes:
    """Serialize one frame matrix into the container byte string."""
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise ValueError(f"frames must be a non-empty 2-D matrix, got {frames.shape}")
    if not np.isfinite(frames).all():
        raise ValueError(f"refusing to encode non-finite frames for {source_id!r}")
    if not frame_rate_hz > 0:
        raise ValueError(f"frame_rate_hz must be > 0, got {frame_rate_hz}")
    source = source_id.encode("utf-8")
    if len(source) > 0xFFFF:
        raise ValueError(f"source_id too long ({len(source)} bytes)")
    parts = [
        _FIXED_HEADER.pack(
            MAGIC, FORMAT_VERSION, 0, float(frame_rate_hz),
            frames.shape[0], frames.shape[1],
        ),
        struct.pack("<H", len(source)),
        source,
        struct.pack("<h", -1 if layer is None else int(layer)),
        frames.astype("<f4", copy=False).tobytes(),
    ]
    return b"".join(parts)


def write_feature_file(
    frames: np.ndarray,
    frame_rate_hz: float,
    source_id: str,
    layer: int | None,
    path: str | Path,
) -> None:
    """Atomically write one feature file (temp in the same dir, then rename)."""
    path = Path(path)
    payload = encode_feature_file(frames, frame_rate_hz, source_id, layer)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except FileNotFoundError:
            pass
        raise
