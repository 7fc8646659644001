"""Supervised pre-training of the vision encoder on (possibly soft) multi-label targets."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import load_checkpoint, load_into, optimizer_tensors, restore_optimizer, save_checkpoint
from ..data.dataset import VolumeSet, batch_indices, make_batch
from ..evaluation.metrics import UndefinedMetricError, auc
from .encoder import SegHead, SupervisedModel, build_encoder
from .losses import aux_seg_loss, bce_with_logits, smooth_labels

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainState:
    step: int
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    config: dict
    loss_history: list[float] = field(default_factory=list)
    val_history: list[tuple[int, float]] = field(default_factory=list)
    config_hash: str = ""

    def named_parameters(self) -> dict[str, torch.nn.Parameter]:
        return dict(self.model.named_parameters())


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def build_supervised_model(config: dict, n_classes: int, seed: int) -> SupervisedModel:
    """Encoder and classifier are initialised from ``seed``; the seg head from a separate stream."""
    torch.manual_seed(seed)
    encoder = build_encoder(config.get("encoder"))
    model = SupervisedModel(encoder, n_classes)
    if config.get("ass"):
        crop = config["crop_shape"]
        mask_shape = [c // config.get("mask_downsample", 1) for c in crop]
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed + 7919)
        model.seg_head = SegHead(encoder.out_channels, int(config["n_structures"]), mask_shape)
        torch.random.set_rng_state(gen_state)
    return model


def _optimizer(model: torch.nn.Module, config: dict) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=config["lr"], weight_decay=config.get("weight_decay", 0.01))


@torch.no_grad()
def predict_probs(model: SupervisedModel, vs: VolumeSet, crop_shape, batch_size: int = 16) -> np.ndarray:
    """Centre-crop class probabilities for every volume in ``vs``."""
    model.eval()
    out = []
    for start in range(0, len(vs), batch_size):
        x, _ = make_batch(vs, range(start, min(start + batch_size, len(vs))), crop_shape, mode="center")
        logits, _ = model(x)
        out.append(torch.sigmoid(logits).double().numpy())
    model.train()
    return np.concatenate(out)


def macro_auc(probs: np.ndarray, labels: np.ndarray) -> float:
    values = []
    for k in range(labels.shape[1]):
        try:
            values.append(auc(probs[:, k], labels[:, k] >= 0.5))
        except UndefinedMetricError:
            continue
    return float(np.mean(values)) if values else float("nan")


def _snapshot(state: TrainState, out_dir: Path | None, name: str) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / name
    save_state(path, state)
    return path


def supervised_train(config: dict, train: VolumeSet, val: VolumeSet | None = None, *, seed: int = 0,
                     state: TrainState | None = None, out_dir: str | Path | None = None,
                     config_hash: str = "") -> TrainState:
    """Minimise BCE (+ weighted auxiliary segmentation loss) with AdamW.

    ``config`` keys: steps, batch_size, lr, weight_decay, label_smoothing, ass,
    ass_weight, mask_downsample, encoder, crop_shape and n_structures (when
    ``ass`` is on). Validation AUC on centre crops is logged after every epoch.
    Passing a restored ``state`` continues the same run bit-identically.
    """
    if train.targets is None:
        raise ValueError("training set has no targets")
    if config.get("ass") and train.masks is None:
        raise ValueError("auxiliary segmentation is enabled but the training set has no masks")
    set_determinism(seed)
    n_classes = train.targets.shape[1]
    config = {**config, "seed": seed,
              "n_structures": config.get("n_structures", train.masks.shape[1] if train.masks is not None else 0)}
    if state is None:
        model = build_supervised_model(config, n_classes, seed)
        state = TrainState(0, model, _optimizer(model, config), config, config_hash=config_hash)
    model, optimizer = state.model, state.optimizer
    model.train()
    crop = tuple(config["crop_shape"])
    bsz = min(config["batch_size"], len(train))
    steps_per_epoch = max(1, math.ceil(len(train) / bsz))
    eps = config.get("label_smoothing", 0.0)
    ass_weight = config.get("ass_weight", 0.0) if config.get("ass") else None
    val_labels = None
    if val is not None:
        val_labels = val.reference if val.reference is not None else val.targets

    while state.step < config["steps"]:
        step = state.step
        idx = batch_indices(len(train), bsz, seed, step)
        x, masks = make_batch(train, idx, crop, mode="random", seed=seed, step=step,
                              mask_downsample=config.get("mask_downsample", 1) if ass_weight is not None else None)
        y = torch.from_numpy(smooth_labels(train.targets[idx], eps).astype(np.float32))
        logits, seg = model(x)
        loss = bce_with_logits(logits, y)
        if ass_weight is not None:
            loss = loss + ass_weight * aux_seg_loss(seg, masks)
        if not torch.isfinite(loss):
            path = _snapshot(state, out_dir, "diverged.ckpt")
            raise TrainingDiverged(f"non-finite loss at step {step}; snapshot: {path}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        state.step += 1
        state.loss_history.append(float(loss.item()))
        if val is not None and (state.step % steps_per_epoch == 0 or state.step == config["steps"]):
            score = macro_auc(predict_probs(model, val, crop), val_labels)
            state.val_history.append((state.step, score))
            log.info("pretrain step %d loss %.4f val_auc %.4f", state.step, state.loss_history[-1], score)
    return state


def save_state(path: str | Path, state: TrainState, extra_meta: dict | None = None) -> None:
    params = {f"model/{k}": v for k, v in state.model.state_dict().items()}
    names = {id(p): k for k, p in state.model.named_parameters()}
    opt_tensors, opt_steps = optimizer_tensors(state.optimizer, names)
    meta = {
        "kind": "supervised",
        "config": state.config,
        "loss_history": state.loss_history,
        "val_history": state.val_history,
        "optimizer_steps": opt_steps,
        **(extra_meta or {}),
    }
    save_checkpoint(path, {**params, **opt_tensors}, step=state.step, config_hash=state.config_hash, meta=meta)


def load_state(path: str | Path) -> TrainState:
    tensors, header = load_checkpoint(path)
    meta = header["meta"]
    if meta.get("kind") != "supervised":
        raise ValueError(f"{path} is not a supervised checkpoint")
    config = meta["config"]
    n_classes = tensors["model/head.bias"].shape[0]
    model = build_supervised_model(config, n_classes, config.get("seed", 0))
    load_into(model, tensors, prefix="model/")
    optimizer = _optimizer(model, config)
    restore_optimizer(optimizer, dict(model.named_parameters()), tensors, meta.get("optimizer_steps", {}))
    return TrainState(header["step"], model, optimizer, config, list(meta.get("loss_history", [])),
                      [tuple(v) for v in meta.get("val_history", [])], header.get("config_hash", ""))


def write_trace(path: str | Path, state: TrainState) -> None:
    val = dict(state.val_history)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "val_auc"])
        for i, loss in enumerate(state.loss_history, 1):
            w.writerow([i, repr(loss), repr(val[i]) if i in val else ""])
