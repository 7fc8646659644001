"""Embedding tables: EMB1 binary file plus a JSONL sidecar mapping rows to item ids."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..data.dataset import VolumeSet, make_batch
from .train import AlignState

EMB_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIB")


@dataclass
class EmbeddingTable:
    ids: list[str]
    vectors: np.ndarray  # float32 (n, d)
    normalized: bool

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or len(self.ids) != self.vectors.shape[0]:
            raise ValueError("embedding table rows and ids disagree")


def write_table(path: str | Path, table: EmbeddingTable) -> None:
    n, d = table.vectors.shape
    data = np.ascontiguousarray(table.vectors, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(EMB_MAGIC, n, d, int(table.normalized)) + data)
    with open(str(path) + ".ids.jsonl", "w", encoding="utf-8") as fh:
        for row, item in enumerate(table.ids):
            fh.write(json.dumps({"row": row, "id": item}) + "\n")


def read_table(path: str | Path) -> EmbeddingTable:
    raw = Path(path).read_bytes()
    magic, n, d, flag = _HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if len(raw) != _HEADER.size + 4 * n * d:
        raise ValueError(f"{path}: size does not match header")
    vectors = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, d).astype(np.float32)
    with open(str(path) + ".ids.jsonl", encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    ids = [r["id"] for r in sorted(rows, key=lambda r: r["row"])]
    return EmbeddingTable(ids, vectors, bool(flag))


def _l2(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@torch.no_grad()
def embed_corpus(state: AlignState, vs: VolumeSet, batch_size: int = 16) -> tuple[EmbeddingTable, EmbeddingTable]:
    """Project every centre-cropped volume and every report; rows follow ``vs.ids``.

    Rows are unit-normalised when the model was trained with cosine similarity.
    """
    model = state.model
    model.eval()
    crop = tuple(state.config["crop_shape"])
    images, texts = [], []
    for start in range(0, len(vs), batch_size):
        index = range(start, min(start + batch_size, len(vs)))
        x, _ = make_batch(vs, index, crop, mode="center")
        images.append(model.encode_image(x).double().numpy())
        texts.append(model.encode_text([vs.reports[i] for i in index]).double().numpy())
    model.train()
    img, txt = np.concatenate(images), np.concatenate(texts)
    if state.l2_normalize:
        img, txt = _l2(img), _l2(txt)
    return (EmbeddingTable(list(vs.ids), img, state.l2_normalize),
            EmbeddingTable(list(vs.ids), txt, state.l2_normalize))
