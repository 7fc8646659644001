"""Planted-signal stand-in for a CT report corpus.

Every class owns a fixed, non-overlapping ellipsoidal region and its own HU band.
A positive label paints that region with the band value on top of a noisy
air-like background, and the paired report states presence or explicit absence
of every class.
"""

from __future__ import annotations

import math

import numpy as np

from .records import LabelKind, LabelVector, ReportRecord, VolumeRecord

BACKGROUND_HU = -850.0
BAND_LOW_HU = -550.0
BAND_HIGH_HU = 150.0

POSITIVE_TEMPLATES = (
    "{name} is present.",
    "There is {name}.",
    "Findings consistent with {name}.",
)
NEGATIVE_TEMPLATES = (
    "No {name}.",
    "There is no {name}.",
    "No evidence of {name}.",
)


def grid_size(n_classes: int) -> int:
    g = max(1, round(n_classes ** (1.0 / 3.0)))
    while g ** 3 < n_classes:
        g += 1
    return g


def class_band_hu(n_classes: int) -> np.ndarray:
    return np.linspace(BAND_LOW_HU, BAND_HIGH_HU, n_classes)


def class_regions(n_classes: int, shape) -> np.ndarray:
    """Boolean array (C, H, W, D); region k is an ellipsoid centred in grid cell k."""
    g = grid_size(n_classes)
    shape = tuple(int(s) for s in shape)
    coords = np.meshgrid(*[np.arange(s) + 0.5 for s in shape], indexing="ij")
    cell = [s / g for s in shape]
    radii = [0.3 * c for c in cell]
    regions = np.zeros((n_classes,) + shape, dtype=bool)
    for k in range(n_classes):
        idx = np.unravel_index(k, (g, g, g))
        centre = [(i + 0.5) * c for i, c in zip(idx, cell)]
        r2 = sum(((x - c0) / max(r, 0.5)) ** 2 for x, c0, r in zip(coords, centre, radii))
        regions[k] = r2 <= 1.0
        if not regions[k].any():
            regions[k][tuple(min(int(c0), s - 1) for c0, s in zip(centre, shape))] = True
    return regions


def render_report(values, vocabulary: list[str], rng: np.random.Generator) -> str:
    sentences = []
    for present, name in zip(values, vocabulary):
        templates = POSITIVE_TEMPLATES if present >= 0.5 else NEGATIVE_TEMPLATES
        template = templates[int(rng.integers(len(templates)))]
        sentence = template.format(name=name.lower())
        sentences.append(sentence[0].upper() + sentence[1:])
    return " ".join(sentences)


def generate_synthetic_corpus(n: int, vocabulary: list[str], volume_shape=(32, 32, 32), rng_seed: int = 0, *,
                              spacing_mm=(1.5, 1.5, 3.0), prevalence: float = 0.3, noise_hu: float = 25.0,
                              offset_hu: float = 0.0, id_prefix: str = "syn"):
    """Return ``(volumes, reports, labels)``, one triple per index, bijectively paired.

    ``offset_hu`` shifts every voxel, which together with a larger ``noise_hu``
    gives a mildly out-of-distribution external set.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if len(vocabulary) < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(rng_seed)
    C = len(vocabulary)
    shape = tuple(int(s) for s in volume_shape)
    regions = class_regions(C, shape)
    bands = class_band_hu(C)
    band_jitter = 0.2 * (bands[1] - bands[0]) if C > 1 else 0.0

    label_matrix = (rng.random((n, C)) < prevalence).astype(np.float64)
    volumes, reports, labels = [], [], []
    for i in range(n):
        vid = f"{id_prefix}{i:05d}"
        vox = BACKGROUND_HU + offset_hu + noise_hu * rng.standard_normal(shape)
        for k in np.flatnonzero(label_matrix[i]):
            level = bands[k] + rng.uniform(-band_jitter, band_jitter)
            vox[regions[k]] = level + offset_hu + noise_hu * rng.standard_normal(int(regions[k].sum()))
        volumes.append(VolumeRecord(vid, vox.astype(np.float32), spacing_mm))
        reports.append(ReportRecord(vid, render_report(label_matrix[i], vocabulary, rng), vid))
        labels.append(LabelVector(label_matrix[i], list(vocabulary), LabelKind.HARD))
    return volumes, reports, labels


def signature_masks(label_values, regions: np.ndarray) -> np.ndarray:
    """Per-class segmentation masks for one volume: region k where class k is positive."""
    present = np.asarray(label_values) >= 0.5
    return regions & present[:, None, None, None]


def region_mean_classifier(volume: np.ndarray, regions: np.ndarray, normalized: bool = False) -> np.ndarray:
    """Threshold the mean intensity inside each class region halfway to its band."""
    C = regions.shape[0]
    bands = class_band_hu(C)
    thresholds = (bands + BACKGROUND_HU) / 2.0
    if normalized:
        thresholds = 2.0 * (thresholds + 1000.0) / 1200.0 - 1.0
    means = np.array([volume[regions[k]].mean() for k in range(C)])
    return (means > thresholds).astype(np.float64)


def split_ids(ids: list[str], validation_fraction: float, rng_seed: int) -> tuple[list[str], list[str]]:
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(ids))
    n_val = int(math.floor(len(ids) * validation_fraction + 0.5))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val
