"""Two-caption confidence scoring and low-confidence filtering."""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .. import kernels
from ..data import LabeledSet
from .manifest import DatasetManifest


class CaptionScorer(Protocol):
    def logits(self, image: np.ndarray, captions: list[str]) -> np.ndarray:
        """Image-caption similarity logits, one per caption."""


def captions_for(metaclass: str) -> tuple[str, str]:
    return f"a photo with a {metaclass} on it", f"a photo without a {metaclass} on it"


def clip_confidence(image: np.ndarray, metaclass: str, scorer: CaptionScorer) -> float:
    """Softmax weight of the positive caption against the negative one."""
    pos, neg = captions_for(metaclass)
    lp, ln = (float(v) for v in scorer.logits(image, [pos, neg]))
    if lp == ln:
        return 0.5
    d = ln - lp
    if d == -math.inf:
        return 1.0
    if d == math.inf:
        return 0.0
    return 1.0 / (1.0 + math.exp(d)) if d < 700 else 0.0


class CentroidScorer:
    """Toy stand-in for a vision-language scorer.

    The positive caption's logit is ``(threshold - d) / temperature`` where
    ``d`` is the distance to the nearest class centroid of real data; the
    negative caption's logit is 0. ``threshold`` defaults to twice the
    median distance of real items to their nearest centroid.
    """

    def __init__(self, centroids: np.ndarray, threshold: float, temperature: float = 0.25):
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.threshold = float(threshold)
        self.temperature = float(temperature)

    @classmethod
    def fit(cls, trainset: LabeledSet, temperature: float = 0.25) -> "CentroidScorer":
        cents = trainset.class_means()
        _, d2 = kernels.nearest_centroid(trainset.images.reshape(len(trainset), -1).astype(np.float64), cents)
        return cls(cents, 2.0 * float(np.median(np.sqrt(d2))), temperature)

    def logits(self, image, captions):
        x = np.asarray(image, dtype=np.float64).reshape(1, -1)
        _, d2 = kernels.nearest_centroid(x, self.centroids)
        margin = (self.threshold - math.sqrt(d2[0])) / self.temperature
        return np.array([0.0 if "without" in c else margin for c in captions])


def clean(manifest: DatasetManifest, fraction: float, scorer: CaptionScorer, per_class: bool = False) -> DatasetManifest:
    """Drop the ``floor(fraction * M)`` lowest-confidence records.

    Ties go by record position, earlier records dropped first. Survivors
    keep their order and carry their score. With ``per_class`` the floor
    applies within each target class separately. No replacements are
    generated.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must lie in [0, 1), got {fraction}")
    metaclass = manifest.header.get("metaclass", "object")
    scores = np.empty(len(manifest))
    for i, rec in enumerate(manifest.records):
        try:
            scores[i] = clip_confidence(manifest.image(i), metaclass, scorer)
        except Exception as e:
            raise RuntimeError(f"scoring failed for record {i} ({rec.image_ref})") from e
    scored = manifest.annotate(scores)
    groups = [np.arange(len(manifest))]
    if per_class:
        targets = np.array([r.target_class for r in manifest.records])
        groups = [np.flatnonzero(targets == c) for c in np.unique(targets)]
    drop = set()
    for g in groups:
        k = int(math.floor(fraction * len(g)))
        # stable sort on score keeps position order among ties
        order = g[np.argsort(scores[g], kind="stable")]
        drop.update(int(i) for i in order[:k])
    kept = [r for i, r in enumerate(scored.records) if i not in drop]
    return scored.with_records(kept, cleaned_fraction=fraction, cleaned_per_class=per_class,
                               count_before_cleaning=len(manifest))
