from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class ZeroShotProtocol:
    """Per class a positive and a negative prompt; the score is the positive share of a 2-way softmax."""

    class_names: tuple[str, ...]
    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.class_names) == len(self.positive) == len(self.negative)):
            raise ValueError("one positive and one negative prompt per class")
        for name, p, n in zip(self.class_names, self.positive, self.negative):
            if p == n:
                raise ValueError(f"prompts for {name!r} must differ")

    @classmethod
    def from_templates(cls, class_names, positive: str = "{name} is present.",
                       negative: str = "{name} is not present.") -> ZeroShotProtocol:
        names = tuple(class_names)
        return cls(names, tuple(positive.format(name=n) for n in names), tuple(negative.format(name=n) for n in names))

    def flipped(self) -> ZeroShotProtocol:
        return ZeroShotProtocol(self.class_names, self.negative, self.positive)


def two_way_softmax(sim_pos, sim_neg) -> np.ndarray:
    """``exp(a) / (exp(a) + exp(b))`` evaluated so that swapping a and b gives exactly ``1 - s``.

    The sigmoid is only evaluated on the non-negative side and clamped below 1;
    the other side is its exact complement.
    """
    d = np.asarray(sim_pos, dtype=np.float64) - np.asarray(sim_neg, dtype=np.float64)
    hi = np.minimum(expit(np.abs(d)), _BELOW_ONE)
    return np.where(d >= 0, hi, 1.0 - hi)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def zero_shot_scores(image_embeddings, protocol: ZeroShotProtocol, embed_text: Callable[[list[str]], np.ndarray],
                     l2_normalize: bool) -> np.ndarray:
    """Scores in (0, 1) of shape (n_images, n_classes).

    ``embed_text`` maps prompts to the shared space (text encoder followed by
    its projection). Similarities use the same mode as training.
    """
    img = np.atleast_2d(np.asarray(image_embeddings, dtype=np.float64))
    pos = np.asarray(embed_text(list(protocol.positive)), dtype=np.float64)
    neg = np.asarray(embed_text(list(protocol.negative)), dtype=np.float64)
    if l2_normalize:
        img, pos, neg = _unit(img), _unit(pos), _unit(neg)
    return two_way_softmax(img @ pos.T, img @ neg.T)
