"""BMP decoding, pixel normalization, and dataset manifests.

The on-disk corpus is a tree of BMP files whose directory names carry the
class label.  ``ingest`` walks the tree, hashes every file, deduplicates
by content, and writes a JSON Lines manifest that the rest of the
pipeline treats as the single source of truth for sample identity and
ordering (records are sorted by content digest).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DecodeError
from .imageops import bilinear_resize

log = logging.getLogger(__name__)

TARGET_HEIGHT = 299
TARGET_WIDTH = 299

SCHEMA_VERSION = 1
HASH_ALGORITHM = "sha256"
ID_LENGTH = 16

# BI_RGB only; the corpus uses plain uncompressed bitmaps.
_BI_RGB = 0
_ACCEPTED_DIB_SIZES = (40, 52, 56, 108, 124)


@dataclass
class RawImage:
    """Decoded pixels, top-down row order, RGB channel order."""

    height: int
    width: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3):
            raise DataError(
                f"pixel array shape {self.pixels.shape} does not match "
                f"({self.height}, {self.width}, 3)"
            )
        if self.pixels.dtype != np.uint8:
            raise DataError(f"pixel array must be uint8, got {self.pixels.dtype}")


@dataclass
class CellImage:
    """A normalized sample ready for the classifier."""

    pixels: np.ndarray  # (299, 299, 3) float32 in [0, 1]
    label: int
    sample_id: str
    source_path: str
    digest: str


@dataclass
class ManifestRecord:
    sample_id: str
    path: str
    label: int
    digest: str
    patient_id: Optional[str] = None


@dataclass
class Manifest:
    records: List[ManifestRecord] = field(default_factory=list)
    root: str = ""
    duplicates: int = 0
    skipped: int = 0
    created_at: Optional[str] = None
    schema_version: int = SCHEMA_VERSION
    hash_algorithm: str = HASH_ALGORITHM

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)


def _u16(data: bytes, off: int) -> int:
    return struct.unpack_from("<H", data, off)[0]


def _u32(data: bytes, off: int) -> int:
    return struct.unpack_from("<I", data, off)[0]


def _i32(data: bytes, off: int) -> int:
    return struct.unpack_from("<i", data, off)[0]


def decode_bmp(data: bytes) -> RawImage:
    """Decode an uncompressed 24- or 32-bit BMP byte string.

    Raises DecodeError naming the offending field and byte offset for
    anything outside the supported subset (BI_RGB, positive width,
    top-down or bottom-up rows).
    """
    if len(data) < 54:
        raise DecodeError(f"file too short for BMP headers: {len(data)} bytes")
    if data[0:2] != b"BM":
        raise DecodeError(f"bad magic {data[0:2]!r} at offset 0, expected b'BM'")
    pixel_offset = _u32(data, 10)
    dib_size = _u32(data, 14)
    if dib_size not in _ACCEPTED_DIB_SIZES:
        raise DecodeError(f"unsupported DIB header size {dib_size} at offset 14")
    width = _i32(data, 18)
    height = _i32(data, 22)
    planes = _u16(data, 26)
    bpp = _u16(data, 28)
    compression = _u32(data, 30)
    if width <= 0:
        raise DecodeError(f"non-positive width {width} at offset 18")
    if height == 0:
        raise DecodeError("zero height at offset 22")
    if planes != 1:
        raise DecodeError(f"planes field is {planes} at offset 26, expected 1")
    if bpp not in (24, 32):
        raise DecodeError(f"unsupported bit depth {bpp} at offset 28, expected 24 or 32")
    if compression != _BI_RGB:
        raise DecodeError(
            f"unsupported compression {compression} at offset 30, only BI_RGB (0) is handled"
        )

    top_down = height < 0
    abs_h = -height if top_down else height
    channels = bpp // 8
    stride = (width * channels + 3) & ~3
    need = stride * abs_h
    if pixel_offset + need > len(data):
        raise DecodeError(
            f"truncated pixel array: need {need} bytes at offset {pixel_offset}, "
            f"file has {len(data) - pixel_offset} after that offset"
        )

    rows = np.frombuffer(data, dtype=np.uint8, count=need, offset=pixel_offset)
    rows = rows.reshape(abs_h, stride)[:, : width * channels]
    px = rows.reshape(abs_h, width, channels)
    rgb = px[:, :, [2, 1, 0]]  # stored B, G, R(, A)
    if not top_down:
        rgb = rgb[::-1]
    return RawImage(height=abs_h, width=width, pixels=np.ascontiguousarray(rgb))


def encode_bmp(image: RawImage) -> bytes:
    """Encode pixels as a bottom-up 24-bit BI_RGB BMP."""
    h, w = image.height, image.width
    stride = (w * 3 + 3) & ~3
    body = np.zeros((h, stride), dtype=np.uint8)
    bgr = image.pixels[::-1, :, [2, 1, 0]]
    body[:, : w * 3] = bgr.reshape(h, w * 3)
    pixel_bytes = body.tobytes()
    file_size = 54 + len(pixel_bytes)
    header = struct.pack("<2sIHHI", b"BM", file_size, 0, 0, 54)
    dib = struct.pack("<IiiHHIIiiII", 40, w, h, 1, 24, 0, len(pixel_bytes), 2835, 2835, 0, 0)
    return header + dib + pixel_bytes


def normalize_resize(image: RawImage) -> np.ndarray:
    """uint8 RGB -> float32 (299, 299, 3) in [0, 1].

    Divides by 255 first, then resamples bilinearly so interpolation
    happens in the normalized space.
    """
    scaled = image.pixels.astype(np.float32) / np.float32(255.0)
    out = bilinear_resize(scaled, TARGET_HEIGHT, TARGET_WIDTH)
    return np.clip(out, 0.0, 1.0).astype(np.float32, copy=False)


def _label_for(path: Path, root: Path, label_rule: Mapping[str, int]) -> Optional[int]:
    # Nearest labeled ancestor wins, walking from the file upward to root.
    for parent in path.parents:
        if parent.name in label_rule:
            return int(label_rule[parent.name])
        if parent == root:
            break
    return None


def ingest(root_dir: Path, label_rule: Mapping[str, int]) -> Manifest:
    """Walk ``root_dir``, decode every BMP, and build a deduplicated manifest.

    Files that fail to read or decode, and files with no labeled ancestor
    directory, are skipped with a logged warning.  Identical file contents
    are recorded once (lexicographically smallest relative path kept) and
    counted in ``Manifest.duplicates``.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"root directory does not exist: {root}")

    by_digest: Dict[str, Tuple[str, int]] = {}
    duplicates = 0
    skipped = 0
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.suffix.lower() != ".bmp":
            continue
        rel = path.relative_to(root).as_posix()
        label = _label_for(path, root, label_rule)
        if label is None:
            log.warning("no labeled ancestor directory for %s; skipped", rel)
            skipped += 1
            continue
        try:
            data = path.read_bytes()
            decode_bmp(data)
        except (OSError, DecodeError) as exc:
            log.warning("skipping %s: %s", rel, exc)
            skipped += 1
            continue
        digest = hashlib.sha256(data).hexdigest()
        if digest in by_digest:
            # Paths are visited in sorted order, so the kept record is the
            # lexicographically smallest path with these contents.
            duplicates += 1
            prev_rel, prev_label = by_digest[digest]
            if prev_label != label:
                log.warning(
                    "duplicate contents with conflicting labels: %s (%d) vs %s (%d); keeping first",
                    prev_rel, prev_label, rel, label,
                )
            continue
        by_digest[digest] = (rel, label)

    if not by_digest:
        raise DataError(f"no decodable labeled BMP files found under {root}")

    records = []
    digests = sorted(by_digest)
    id_len = ID_LENGTH
    while len({d[:id_len] for d in digests}) < len(digests):
        id_len += 4  # hex prefix collision; widen until unique
    for digest in digests:
        rel, label = by_digest[digest]
        records.append(
            ManifestRecord(sample_id=digest[:id_len], path=rel, label=label, digest=digest)
        )
    return Manifest(
        records=records,
        root=str(root.resolve()),
        duplicates=duplicates,
        skipped=skipped,
    )


def save_manifest(manifest: Manifest, path: Path, meta: Optional[dict] = None) -> None:
    """Write a manifest as JSON Lines: one header line, then one record per line."""
    header = {
        "schema_version": manifest.schema_version,
        "hash_algorithm": manifest.hash_algorithm,
        "root": manifest.root,
        "count": len(manifest.records),
        "duplicates": manifest.duplicates,
        "skipped": manifest.skipped,
        "created_at": manifest.created_at,
    }
    if meta:
        header["meta"] = meta
    lines = [json.dumps(header, sort_keys=True)]
    for r in manifest.records:
        lines.append(
            json.dumps(
                {
                    "id": r.sample_id,
                    "path": r.path,
                    "label": r.label,
                    "digest": r.digest,
                    "patient_id": r.patient_id,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataError(f"manifest is empty: {path}")
    try:
        header = json.loads(lines[0])
        if header.get("schema_version") != SCHEMA_VERSION:
            raise DataError(
                f"unsupported manifest schema {header.get('schema_version')!r} in {path}"
            )
        records = []
        for i, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                ManifestRecord(
                    sample_id=obj["id"],
                    path=obj["path"],
                    label=int(obj["label"]),
                    digest=obj["digest"],
                    patient_id=obj.get("patient_id"),
                )
            )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    return Manifest(
        records=records,
        root=header.get("root", ""),
        duplicates=int(header.get("duplicates", 0)),
        skipped=int(header.get("skipped", 0)),
        created_at=header.get("created_at"),
    )


def load_cell_images(manifest: Manifest, indices: Optional[Sequence[int]] = None) -> List[CellImage]:
    """Decode and normalize the manifest entries given by ``indices`` (all by default)."""
    root = Path(manifest.root)
    if indices is None:
        indices = range(len(manifest.records))
    out = []
    for i in indices:
        rec = manifest.records[i]
        file_path = root / rec.path
        try:
            raw = decode_bmp(file_path.read_bytes())
        except OSError as exc:
            raise DataError(f"cannot read {file_path}: {exc}") from exc
        out.append(
            CellImage(
                pixels=normalize_resize(raw),
                label=rec.label,
                sample_id=rec.sample_id,
                source_path=str(file_path),
                digest=rec.digest,
            )
        )
    return out
