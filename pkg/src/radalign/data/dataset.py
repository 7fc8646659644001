"""In-memory preprocessed corpus and stateless batch construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .preprocess import apply_window, crop_window, pad_or_crop_array, preprocess_volume
from .records import LabelVector, ReportRecord, VolumeRecord


@dataclass
class VolumeSet:
    """Padded, normalized volumes with their reports and label matrices.

    ``targets`` are the training labels (possibly soft), ``reference`` the hard
    labels used for evaluation; either may be None.
    """

    ids: list[str]
    volumes: np.ndarray
    reports: list[str]
    vocabulary: list[str]
    targets: np.ndarray | None = None
    reference: np.ndarray | None = None
    masks: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index) -> VolumeSet:
        index = np.asarray(index, dtype=np.int64)
        pick = lambda a: None if a is None else a[index]
        return VolumeSet([self.ids[i] for i in index], self.volumes[index], [self.reports[i] for i in index],
                         list(self.vocabulary), pick(self.targets), pick(self.reference), pick(self.masks))

    def select_ids(self, ids) -> VolumeSet:
        pos = {vid: i for i, vid in enumerate(self.ids)}
        missing = [i for i in ids if i not in pos]
        if missing:
            raise KeyError(f"unknown ids: {missing[:5]}")
        return self.subset([pos[i] for i in ids])


def build_volume_set(volumes: list[VolumeRecord], reports: list[ReportRecord], vocabulary: list[str], *,
                     target_spacing_mm, pad_shape, targets: list[LabelVector] | None = None,
                     reference: list[LabelVector] | None = None, masks: list[np.ndarray] | None = None) -> VolumeSet:
    by_volume = {r.paired_volume_id: r.text for r in reports}
    arrays, mask_arrays = [], []
    for i, v in enumerate(volumes):
        arrays.append(preprocess_volume(v, target_spacing_mm, pad_shape).voxels)
        if masks is not None:
            if tuple(v.spacing_mm) != tuple(float(s) for s in target_spacing_mm):
                raise ValueError("masks are only supported for volumes already at the target spacing")
            mask_arrays.append(pad_or_crop_array(masks[i], pad_shape, 0))
    mat = lambda labs: None if labs is None else np.stack([lab.values for lab in labs])
    return VolumeSet(
        ids=[v.id for v in volumes],
        volumes=np.stack(arrays).astype(np.float32),
        reports=[by_volume[v.id] for v in volumes],
        vocabulary=list(vocabulary),
        targets=mat(targets),
        reference=mat(reference),
        masks=np.stack(mask_arrays) if masks is not None else None,
    )


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices for ``step``: a fresh permutation per epoch, consumed in order.

    Depends only on (seed, step), so a resumed run sees the same batches.
    """
    per_epoch = max(1, -(-n // batch_size))
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng(derive_seed(seed, epoch)).permutation(n)
    idx = perm[pos * batch_size:(pos + 1) * batch_size]
    if len(idx) < min(batch_size, n):  # short last batch is topped up from the epoch start
        idx = np.concatenate([idx, perm[:min(batch_size, n) - len(idx)]])
    return idx


def make_batch(vs: VolumeSet, index, crop_shape, *, mode: str = "random", seed: int = 0, step: int = 0,
               mask_downsample: int | None = None):
    """Crop volumes (and masks, with the same window) into float32 tensors."""
    crops, mask_crops = [], []
    for j, i in enumerate(index):
        offsets = crop_window(vs.volumes.shape[1:], crop_shape, mode, derive_seed(seed, step, j) if mode == "random" else None)
        crops.append(apply_window(vs.volumes[i], offsets, crop_shape))
        if mask_downsample is not None and vs.masks is not None:
            mask_crops.append(apply_window(vs.masks[i], offsets, crop_shape))
    x = torch.from_numpy(np.stack(crops)[:, None].astype(np.float32))
    masks = None
    if mask_crops:
        m = torch.from_numpy(np.stack(mask_crops).astype(np.float32))
        masks = torch.nn.functional.max_pool3d(m, mask_downsample) if mask_downsample > 1 else m
    return x, masks
