"""Evaluate a trained dual encoder: zero-shot diagnosis and retrieval per split."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch

from ..alignment.embeddings import embed_corpus
from ..alignment.train import AlignState
from ..data.dataset import VolumeSet
from .metrics import multilabel_metrics
from .retrieval import map_at_k, recall_at_k, shares_positive
from .zeroshot import ZeroShotProtocol, zero_shot_scores

DEFAULT_SETTINGS = {
    "tasks": ["zeroshot", "retrieval"],
    "threshold_policy": "youden",
    "positive_prompt": "{name} is present.",
    "negative_prompt": "{name} is not present.",
    "map_k": [5, 10, 50],
    "recall_k": [5, 10, 50, 100],
}


def text_embedder(state: AlignState):
    @torch.no_grad()
    def embed(texts: list[str]) -> np.ndarray:
        state.model.eval()
        out = state.model.encode_text(texts).double().numpy()
        state.model.train()
        return out

    return embed


def _unit(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def evaluate_split(state: AlignState, vs: VolumeSet, settings: dict | None = None, prefix: str = "") -> tuple[dict, dict]:
    """Return ``(scalars, per_class)`` for one split.

    Image-image retrieval always ranks by cosine similarity; zero-shot and
    report-image retrieval use the similarity mode the model was trained with.
    """
    settings = {**DEFAULT_SETTINGS, **(settings or {})}
    if vs.reference is None:
        raise ValueError("evaluation needs reference labels")
    images, reports = embed_corpus(state, vs)
    scalars, per_class = {}, {}
    if "zeroshot" in settings["tasks"]:
        protocol = ZeroShotProtocol.from_templates(vs.vocabulary, settings["positive_prompt"], settings["negative_prompt"])
        scores = zero_shot_scores(images.vectors, protocol, text_embedder(state), state.l2_normalize)
        report = multilabel_metrics(scores, vs.reference, vs.vocabulary, settings["threshold_policy"])
        scalars.update({f"{prefix}zeroshot.{k}": v for k, v in report.scalars.items()})
        per_class[f"{prefix}zeroshot"] = report.per_class
    if "retrieval" in settings["tasks"]:
        img = images.vectors.astype(np.float64)
        txt = reports.vectors.astype(np.float64)
        cos = _unit(img) @ _unit(img).T
        relevance = shares_positive(vs.reference, vs.reference)
        for k in settings["map_k"]:
            if k <= len(vs) - 1:
                scalars[f"{prefix}image_image.map@{k}"] = map_at_k(cos, relevance, vs.ids, k, exclude_self=True)
        sim = txt @ img.T  # rows already unit-length in normalized mode
        for k in settings["recall_k"]:
            if k <= len(vs):
                scalars[f"{prefix}report_image.recall@{k}"] = recall_at_k(sim, vs.ids, vs.ids, k)
    return scalars, per_class


def evaluate_state(state: AlignState, splits: dict[str, VolumeSet], settings: dict | None = None) -> dict:
    """Flat ``metric -> value`` map over all splits plus a ``per_class`` sub-map."""
    report, per_class = {}, {}
    for name, vs in splits.items():
        scalars, pc = evaluate_split(state, vs, settings, prefix=f"{name}.")
        report.update(scalars)
        per_class.update(pc)
    report["per_class"] = per_class
    return report


def write_per_class_csv(path: str | Path, report: dict) -> None:
    rows = []
    for task, classes in report.get("per_class", {}).items():
        for name, metrics in classes.items():
            rows.append({"task": task, "class": name, **{k: metrics[k] for k in sorted(metrics)}})
    if not rows:
        return
    keys = ["task", "class"] + sorted({k for r in rows for k in r} - {"task", "class"})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
