"""Binary archive of extracted candidate patches (the `extract` output).

Layout: 8-byte magic, u32 header length, JSON header (patch size, the
recording table with ground-truth mass and class, entry count), then one
fixed-size record per candidate (recording index, frame, bbox, the raw
a/b/d floats, and the uint8 patch), and a trailing CRC32 of everything
before it.  Everything is little-endian.
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .data import Candidate, DataError, PATCH_SIZE

ARCHIVE_MAGIC = b"MCPATCH1"

_ENTRY_HEAD = struct.Struct("<IIiiiiddd")
_PATCH_BYTES = PATCH_SIZE * PATCH_SIZE * 3


@dataclass(frozen=True)
class RecordingInfo:
    recording_id: str
    true_mass: float | None
    container_class: str


def _patch_to_u8(patch: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(patch) * 255.0), 0, 255).astype(np.uint8)


def save_archive(path, recordings: list, candidates: list) -> None:
    """Write RecordingInfo rows and Candidate patches to one archive file."""
    index = {info.recording_id: i for i, info in enumerate(recordings)}
    if len(index) != len(recordings):
        raise DataError("duplicate recording ids in archive table")
    header = {
        "patch_size": PATCH_SIZE,
        "recordings": [
            [info.recording_id, info.true_mass, info.container_class]
            for info in recordings
        ],
        "count": len(candidates),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += ARCHIVE_MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for cand in candidates:
        if cand.recording_id not in index:
            raise DataError(f"candidate references unknown recording {cand.recording_id}")
        x, y, w, h = cand.bbox
        blob += _ENTRY_HEAD.pack(
            index[cand.recording_id], cand.frame_index, x, y, w, h,
            cand.a, cand.b, cand.d,
        )
        patch = _patch_to_u8(cand.patch)
        if patch.shape != (PATCH_SIZE, PATCH_SIZE, 3):
            raise DataError(f"patch shape {patch.shape} is not square {PATCH_SIZE}")
        blob += patch.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_archive(path):
    """Read back (recordings, candidates); patches come out float32 in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(ARCHIVE_MAGIC) + 8:
        raise DataError(f"{path}: unexpected end of file")
    if blob[: len(ARCHIVE_MAGIC)] != ARCHIVE_MAGIC:
        raise DataError(f"{path}: bad magic, not a patch archive")
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc_stored:
        raise DataError(f"{path}: checksum mismatch")
    offset = len(ARCHIVE_MAGIC)
    (header_len,) = struct.unpack("<I", blob[offset : offset + 4])
    offset += 4
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    if header.get("patch_size") != PATCH_SIZE:
        raise DataError(f"{path}: unsupported patch size {header.get('patch_size')}")
    recordings = [
        RecordingInfo(rid, None if mass is None else float(mass), cls)
        for rid, mass, cls in header["recordings"]
    ]
    candidates = []
    entry_size = _ENTRY_HEAD.size + _PATCH_BYTES
    for k in range(int(header["count"])):
        chunk = blob[offset : offset + entry_size]
        if len(chunk) < entry_size:
            raise DataError(f"{path}: unexpected end of file in entry {k}")
        rec_idx, frame, x, y, w, h, a, b, d = _ENTRY_HEAD.unpack(
            chunk[: _ENTRY_HEAD.size]
        )
        if rec_idx >= len(recordings):
            raise DataError(f"{path}: entry {k} references recording {rec_idx}")
        patch = (
            np.frombuffer(chunk[_ENTRY_HEAD.size :], dtype=np.uint8)
            .reshape(PATCH_SIZE, PATCH_SIZE, 3)
            .astype(np.float32)
            / 255.0
        )
        candidates.append(
            Candidate(
                recording_id=recordings[rec_idx].recording_id,
                frame_index=frame,
                bbox=(x, y, w, h),
                patch=patch,
                a=a,
                b=b,
                d=d,
            )
        )
        offset += entry_size
    if offset != len(blob) - 4:
        raise DataError(f"{path}: trailing bytes after entries")
    return recordings, candidates
