"""Contrastive image-report alignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import load_checkpoint, load_into, optimizer_tensors, restore_optimizer, save_checkpoint
from ..data.dataset import VolumeSet, batch_indices, make_batch
from .losses import NORMALIZED_COEFFICIENT, UNNORMALIZED_COEFFICIENT, clip_loss, similarity_matrix
from .model import DualEncoder, build_dual_encoder

log = logging.getLogger(__name__)


@dataclass
class AlignState:
    step: int
    model: DualEncoder
    optimizer: torch.optim.Optimizer
    config: dict
    loss_history: list[float] = field(default_factory=list)
    config_hash: str = ""

    @property
    def l2_normalize(self) -> bool:
        return bool(self.config["l2_normalize"])


def resolve_mode(config: dict, init: str) -> tuple[bool, float]:
    """Fill in ``"auto"`` similarity settings.

    Raw inner products (with the 0.1 loss coefficient) are the default only for
    supervised initialisation; other inits keep cosine similarity.
    """
    l2 = config.get("l2_normalize", "auto")
    if l2 == "auto":
        l2 = init != "supervised"
    coef = config.get("loss_coefficient", "auto")
    if coef == "auto":
        coef = NORMALIZED_COEFFICIENT if l2 else UNNORMALIZED_COEFFICIENT
    return bool(l2), float(coef)


def load_vision_weights(model: DualEncoder, init: str, path: str | Path | None) -> None:
    if init == "random":
        return
    if path is None:
        raise ValueError(f"init {init!r} needs a checkpoint path")
    path = Path(path)
    if init == "supervised":
        tensors, header = load_checkpoint(path)
        if header["meta"].get("kind") != "supervised":
            raise ValueError(f"{path} is not a supervised pre-training checkpoint")
        load_into(model.vision, tensors, prefix="model/encoder.")
    elif init == "external":
        if path.suffix in (".pt", ".pth"):
            tensors = torch.load(path, map_location="cpu", weights_only=True)
        else:
            tensors, _ = load_checkpoint(path)
        prefixes = ("model/encoder.", "model/vision.", "encoder.", "vision.")
        prefix = next((p for p in prefixes if any(k.startswith(p) for k in tensors)), "")
        load_into(model.vision, tensors, prefix=prefix)
    else:
        raise ValueError(f"unknown init mode {init!r}")


def _optimizer(model: DualEncoder, config: dict) -> torch.optim.Optimizer:
    for p in model.text.parameters():
        p.requires_grad_(not config.get("freeze_text", False))
    for p in model.vision.parameters():
        p.requires_grad_(not config.get("freeze_vision", False))
    # projections and the text side start from scratch and may take a larger step than the image encoder
    head_lr = config.get("head_lr") or config["lr"]
    vision_ids = {id(p) for p in model.vision.parameters()}
    groups = [
        {"params": [p for p in model.vision.parameters() if p.requires_grad], "lr": config["lr"]},
        {"params": [p for p in model.parameters() if p.requires_grad and id(p) not in vision_ids], "lr": head_lr},
    ]
    groups = [g for g in groups if g["params"]]
    return torch.optim.AdamW(groups, weight_decay=config.get("weight_decay", 0.01))


def align_train(config: dict, train: VolumeSet, init: str = "random", checkpoint: str | Path | None = None, *,
                seed: int = 0, state: AlignState | None = None, config_hash: str = "") -> AlignState:
    """Minimise the symmetric contrastive loss over random image/report batches.

    ``config`` keys: steps, batch_size, lr, head_lr, weight_decay, l2_normalize,
    loss_coefficient, shared_dim, text_dim, text_buckets, freeze_text,
    freeze_vision, encoder, crop_shape.
    """
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    l2, coef = resolve_mode(config, init)
    config = {**config, "l2_normalize": l2, "loss_coefficient": coef, "init": init, "seed": seed}
    if state is None:
        model = build_dual_encoder(config, seed)
        load_vision_weights(model, init, checkpoint)
        state = AlignState(0, model, _optimizer(model, config), config, config_hash=config_hash)
    model, optimizer = state.model, state.optimizer
    model.train()
    crop = tuple(config["crop_shape"])
    bsz = min(config["batch_size"], len(train))
    while state.step < config["steps"]:
        step = state.step
        idx = batch_indices(len(train), bsz, seed, step)
        x, _ = make_batch(train, idx, crop, mode="random", seed=seed, step=step)
        texts = [train.reports[i] for i in idx]
        S = similarity_matrix(model.encode_image(x), model.encode_text(texts), l2)
        loss = clip_loss(S, coef)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite contrastive loss at step {step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        state.step += 1
        state.loss_history.append(float(loss.item()))
        if state.step % 50 == 0:
            log.info("align step %d loss %.4f", state.step, float(np.mean(state.loss_history[-50:])))
    return state


def save_align_state(path: str | Path, state: AlignState) -> None:
    params = {f"model/{k}": v for k, v in state.model.state_dict().items()}
    names = {id(p): k for k, p in state.model.named_parameters()}
    opt_tensors, opt_steps = optimizer_tensors(state.optimizer, names)
    meta = {"kind": "align", "config": state.config, "loss_history": state.loss_history, "optimizer_steps": opt_steps}
    save_checkpoint(path, {**params, **opt_tensors}, step=state.step, config_hash=state.config_hash, meta=meta)


def load_align_state(path: str | Path) -> AlignState:
    tensors, header = load_checkpoint(path)
    meta = header["meta"]
    if meta.get("kind") != "align":
        raise ValueError(f"{path} is not an alignment checkpoint")
    config = meta["config"]
    model = build_dual_encoder(config, config.get("seed", 0))
    load_into(model, tensors, prefix="model/")
    optimizer = _optimizer(model, config)
    restore_optimizer(optimizer, dict(model.named_parameters()), tensors, meta.get("optimizer_steps", {}))
    return AlignState(header["step"], model, optimizer, config, list(meta.get("loss_history", [])),
                      header.get("config_hash", ""))
