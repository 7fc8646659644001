"""CT preprocessing chain: resample -> clip/normalize -> pad/crop -> training crop.

Each step checks the ``normalized`` flag so the chain cannot be applied out of order.
"""

from __future__ import annotations

import numpy as np

from .records import PipelineStateError, VolumeRecord

HU_MIN = -1000.0
HU_MAX = 200.0
BACKGROUND = -1.0  # normalized value of air

PAPER_SPACING_MM = (1.5, 1.5, 3.0)
PAPER_PAD_SHAPE = (240, 240, 120)
PAPER_CROP_SHAPE = (192, 192, 96)


def _check_positive(values, what: str) -> tuple:
    values = tuple(values)
    if len(values) != 3 or any(v <= 0 for v in values):
        raise ValueError(f"{what} must be three positive values, got {values}")
    return values


def resampled_shape(shape, spacing, target_spacing) -> tuple[int, int, int]:
    # round half up, never below one voxel
    return tuple(max(1, int(np.floor(n * s / t + 0.5))) for n, s, t in zip(shape, spacing, target_spacing))


def _interp_axis(arr: np.ndarray, axis: int, n_out: int, ratio: float) -> np.ndarray:
    """Linear interpolation along one axis on voxel centres, clamping at the edges.

    ``ratio`` is new_spacing / old_spacing; output voxel j samples the input at
    continuous index (j + 0.5) * ratio - 0.5.
    """
    n_in = arr.shape[axis]
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * ratio - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    w = pos - lo
    shape = [1] * arr.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1.0 - w) + np.take(arr, hi, axis=axis) * w


def resample_volume(v: VolumeRecord, target_spacing_mm=PAPER_SPACING_MM) -> VolumeRecord:
    """Trilinear resampling to ``target_spacing_mm`` (separable linear passes)."""
    target = _check_positive(target_spacing_mm, "target spacing")
    if v.normalized:
        raise PipelineStateError("resample_volume must run before clip_and_normalize")
    new_shape = resampled_shape(v.shape, v.spacing_mm, target)
    out = v.voxels.astype(np.float64)
    for axis in range(3):
        if new_shape[axis] == out.shape[axis] and v.spacing_mm[axis] == target[axis]:
            continue
        out = _interp_axis(out, axis, new_shape[axis], target[axis] / v.spacing_mm[axis])
    return VolumeRecord(v.id, out.astype(np.float32), target, normalized=False)


def normalize_hu(values: np.ndarray) -> np.ndarray:
    clipped = np.clip(values, HU_MIN, HU_MAX)
    return 2.0 * (clipped - HU_MIN) / (HU_MAX - HU_MIN) - 1.0


def clip_and_normalize(v: VolumeRecord) -> VolumeRecord:
    if v.normalized:
        raise PipelineStateError(f"volume {v.id!r} is already normalized")
    out = normalize_hu(v.voxels.astype(np.float64)).astype(np.float32)
    return VolumeRecord(v.id, out, v.spacing_mm, normalized=True)


def pad_or_crop_array(arr: np.ndarray, target_shape, pad_value: float) -> np.ndarray:
    """Centre pad/crop the last three axes of ``arr``; odd remainders go to the high side."""
    target = tuple(int(t) for t in target_shape)
    if len(target) != 3 or any(t <= 0 for t in target):
        raise ValueError(f"target shape must be three positive ints, got {target_shape}")
    lead = arr.ndim - 3
    spatial = arr.shape[lead:]
    slices = [slice(None)] * lead
    pads = [(0, 0)] * lead
    for n, t in zip(spatial, target):
        if n >= t:
            start = (n - t) // 2
            slices.append(slice(start, start + t))
            pads.append((0, 0))
        else:
            total = t - n
            slices.append(slice(None))
            pads.append((total // 2, total - total // 2))
    out = arr[tuple(slices)]
    if any(p != (0, 0) for p in pads):
        out = np.pad(out, pads, mode="constant", constant_values=pad_value)
    return out


def pad_or_crop(v: VolumeRecord, target_shape=PAPER_PAD_SHAPE) -> VolumeRecord:
    if not v.normalized:
        raise PipelineStateError("pad_or_crop expects a normalized volume")
    if tuple(target_shape) == v.shape:
        return VolumeRecord(v.id, v.voxels, v.spacing_mm, normalized=True)
    out = pad_or_crop_array(v.voxels, target_shape, BACKGROUND)
    return VolumeRecord(v.id, out, v.spacing_mm, normalized=True)


def crop_window(shape, target_shape, mode: str = "center", rng_seed: int | None = None) -> tuple[int, int, int]:
    """Start offsets of a ``target_shape`` window inside ``shape``."""
    target = tuple(int(t) for t in target_shape)
    if any(t > n for t, n in zip(target, shape)) or any(t <= 0 for t in target):
        raise ValueError(f"crop {target} does not fit inside volume of shape {tuple(shape)}")
    slack = [n - t for n, t in zip(shape, target)]
    if mode == "center":
        return tuple(s // 2 for s in slack)
    if mode == "random":
        rng = np.random.default_rng(rng_seed)
        return tuple(int(rng.integers(0, s + 1)) for s in slack)
    raise ValueError(f"unknown crop mode {mode!r}")


def apply_window(arr: np.ndarray, offsets, target_shape) -> np.ndarray:
    lead = arr.ndim - 3
    sl = [slice(None)] * lead + [slice(o, o + t) for o, t in zip(offsets, target_shape)]
    return arr[tuple(sl)]


def crop_for_training(v: VolumeRecord, target_shape=PAPER_CROP_SHAPE, mode: str = "random",
                      rng_seed: int | None = None) -> VolumeRecord:
    if not v.normalized:
        raise PipelineStateError("crop_for_training expects a normalized, padded volume")
    offsets = crop_window(v.shape, target_shape, mode, rng_seed)
    return VolumeRecord(v.id, apply_window(v.voxels, offsets, target_shape), v.spacing_mm, normalized=True)


def preprocess_volume(v: VolumeRecord, target_spacing_mm=PAPER_SPACING_MM, pad_shape=PAPER_PAD_SHAPE) -> VolumeRecord:
    """Resample, normalize and pad/crop; training crops are taken later per batch."""
    return pad_or_crop(clip_and_normalize(resample_volume(v, target_spacing_mm)), pad_shape)
