"""Binary volume container and the comma-separated cohort manifest.

Volume file layout, little-endian::

    12-byte magic b"GRADEKIT-VOL" | u32 version          (16 bytes)
    3 x u32 dims | 3 x f32 spacing | u32 dtype tag | u32 n_labels
    payload, x-fastest

dtype tag 1 = float32 scalar volume, 2 = int32 label volume; ``n_labels`` is
0 for scalar volumes.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .volgrid import CLASS_NAMES, LabelVolume, Volume

MAGIC = b"GRADEKIT-VOL"
VERSION = 1
_HEADER = struct.Struct("<12sI3I3fII")
F32, I32 = 1, 2


def volume_bytes(vol):
    if isinstance(vol, LabelVolume):
        tag, n_labels, dt = I32, vol.n_labels, np.dtype("<i4")
    else:
        tag, n_labels, dt = F32, 0, np.dtype("<f4")
    head = _HEADER.pack(MAGIC, VERSION, *vol.dims, *vol.spacing, tag, n_labels)
    return head + np.asarray(vol.data, dtype=dt).tobytes(order="F")


def volume_from_bytes(blob):
    if len(blob) < _HEADER.size:
        raise DataError("volume file shorter than its header")
    magic, version, dx, dy, dz, sx, sy, sz, tag, n_labels = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DataError("not a gradekit volume (bad magic)")
    if version != VERSION:
        raise DataError(f"unsupported volume version {version}")
    dims = (dx, dy, dz)
    dt = {F32: np.dtype("<f4"), I32: np.dtype("<i4")}.get(tag)
    if dt is None:
        raise DataError(f"unknown dtype tag {tag}")
    n = dx * dy * dz
    payload = blob[_HEADER.size:]
    if len(payload) != n * dt.itemsize:
        raise DataError(f"payload is {len(payload)} bytes, expected {n * dt.itemsize}")
    data = np.frombuffer(payload, dtype=dt).reshape(dims, order="F")
    if tag == I32:
        return LabelVolume(data, n_labels, (sx, sy, sz))
    return Volume(data, (sx, sy, sz))


def write_volume(path, vol):
    Path(path).write_bytes(volume_bytes(vol))


def read_volume(path):
    return volume_from_bytes(Path(path).read_bytes())


MANIFEST_COLUMNS = ("subject_id", "image_path", "labels_path", "class", "age", "domain_id")


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    image_path: str
    labels_path: str
    label: str
    age: float
    domain_id: int


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r.subject_id, r.image_path, r.labels_path, r.label, f"{r.age:.4f}", r.domain_id])


def read_manifest(path):
    """Rows of a cohort manifest; relative paths resolve against its folder."""
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(MANIFEST_COLUMNS)}")
        for rec in reader:
            if rec["class"] not in CLASS_NAMES:
                raise DataError(f"{path}: unknown class {rec['class']!r} for {rec['subject_id']}")
            try:
                age = float(rec["age"])
                domain = int(rec["domain_id"])
            except ValueError as exc:
                raise DataError(f"{path}: bad row for {rec['subject_id']}: {exc}") from exc
            rows.append(ManifestRow(
                rec["subject_id"],
                str(base / rec["image_path"]),
                str(base / rec["labels_path"]),
                rec["class"], age, domain,
            ))
    ids = [r.subject_id for r in rows]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate subject ids")
    return rows
