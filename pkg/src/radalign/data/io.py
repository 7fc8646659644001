"""File formats: VOL1 volume container, JSONL manifest and label CSV."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .records import LabelKind, LabelVector, ReportRecord, VolumeRecord

VOL_MAGIC = b"VOL1"
_VOL_HEADER = struct.Struct("<4s3I3f")


def write_volume(path: str | Path, v: VolumeRecord) -> None:
    dims = v.shape
    header = _VOL_HEADER.pack(VOL_MAGIC, *dims, *v.spacing_mm)
    data = np.ascontiguousarray(v.voxels, dtype="<f4").tobytes(order="C")
    Path(path).write_bytes(header + data)


def read_volume(path: str | Path, volume_id: str | None = None) -> VolumeRecord:
    raw = Path(path).read_bytes()
    if len(raw) < _VOL_HEADER.size:
        raise ValueError(f"{path}: truncated volume header")
    magic, d0, d1, d2, s0, s1, s2 = _VOL_HEADER.unpack_from(raw)
    if magic != VOL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    count = d0 * d1 * d2
    expected = _VOL_HEADER.size + 4 * count
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    voxels = np.frombuffer(raw, dtype="<f4", count=count, offset=_VOL_HEADER.size).reshape(d0, d1, d2)
    vid = volume_id if volume_id is not None else Path(path).stem
    return VolumeRecord(vid, voxels.astype(np.float32), (s0, s1, s2))


def write_manifest(path: str | Path, entries: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({k: e[k] for k in ("id", "volume_path", "report_text", "split")}) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            e = json.loads(line)
            missing = {"id", "volume_path", "report_text", "split"} - set(e)
            if missing:
                raise ValueError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            entries.append(e)
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate ids")
    return entries


def manifest_reports(entries: list[dict]) -> list[ReportRecord]:
    return [ReportRecord(e["id"], e["report_text"], e["id"]) for e in entries]


def resolve_volume_path(manifest_path: str | Path, volume_path: str) -> Path:
    p = Path(volume_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def _format_value(v: float, kind: LabelKind) -> str:
    if kind is LabelKind.HARD:
        return "1" if v >= 0.5 else "0"
    if v == 0.0 or v == 1.0:
        return str(int(v))
    return repr(float(v))


def write_labels_csv(path: str | Path, ids: list[str], labels: list[LabelVector]) -> None:
    if len(ids) != len(labels):
        raise ValueError("ids and labels differ in length")
    if not labels:
        raise ValueError("no labels to write")
    vocab = labels[0].vocabulary
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *vocab])
        for vid, lab in zip(ids, labels):
            if lab.vocabulary != vocab:
                raise ValueError(f"label {vid!r} has a different vocabulary")
            w.writerow([vid, *(_format_value(x, lab.kind) for x in lab.values)])


def read_labels_csv(path: str | Path) -> tuple[list[str], list[LabelVector]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["id"]:
        raise ValueError(f"{path}: header must start with 'id'")
    vocab = rows[0][1:]
    body = [row for row in rows[1:] if row]
    for row in body:
        if len(row) != len(vocab) + 1:
            raise ValueError(f"{path}: row for {row[0]!r} has {len(row) - 1} values, expected {len(vocab)}")
    kind = LabelKind.HARD if all(tok in ("0", "1") for row in body for tok in row[1:]) else LabelKind.SOFT
    ids = [row[0] for row in body]
    labels = [LabelVector([float(tok) for tok in row[1:]], list(vocab), kind) for row in body]
    return ids, labels


def labels_matrix(labels: list[LabelVector]) -> np.ndarray:
    return np.stack([lab.values for lab in labels]) if labels else np.zeros((0, 0))
