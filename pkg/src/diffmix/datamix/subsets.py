"""Few-shot and long-tail subsets of a labelled set."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import LabeledSet
from ..errors import InvalidStateError


def subsample_fewshot(dataset: LabeledSet, shots, seed: int = 0) -> LabeledSet:
    """Keep ``min(shots, available)`` random items per class.

    ``shots="all"`` returns the dataset unchanged. Item order follows the
    original set.
    """
    if shots == "all":
        return dataset
    if isinstance(shots, bool) or int(shots) != shots or shots < 1:
        raise ValueError(f"shots must be a positive integer or 'all', got {shots!r}")
    rng = np.random.default_rng([seed, 19])
    keep = []
    for c in range(1, dataset.num_classes + 1):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) == 0:
            raise InvalidStateError(f"class {c} has no images")
        keep.append(rng.choice(idx, min(int(shots), len(idx)), replace=False))
    return dataset.subset(np.sort(np.concatenate(keep)))


@dataclass(frozen=True)
class LongTailSpec:
    """A long-tail split.

    ``order`` lists 1-based classes from head to tail and ``counts`` the
    realized count of each, in that order.
    """

    imbalance_factor: float
    order: np.ndarray
    counts: np.ndarray
    mean_count: float

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    def counts_by_class(self) -> np.ndarray:
        out = np.zeros(self.num_classes, dtype=np.int64)
        out[self.order - 1] = self.counts
        return out

    def to_dict(self) -> dict:
        return {
            "imbalance_factor": self.imbalance_factor, "order": self.order.tolist(),
            "counts": self.counts.tolist(), "mean_count": self.mean_count,
        }


def longtail_counts(mean_count: float, rho: float, N: int) -> np.ndarray:
    """``max(floor(mean * rho ** (-k / (N - 1))), 1)`` for ``k = 0..N-1``."""
    if not rho > 1:
        raise ValueError(f"imbalance factor must exceed 1, got {rho}")
    if N == 1:
        return np.array([max(int(mean_count), 1)])
    out = np.empty(N, dtype=np.int64)
    for k in range(N):
        x = mean_count * rho ** (-k / (N - 1))
        # guard against products like 8 * 4**-0.5 landing just below 4
        out[k] = max(math.floor(x + 1e-9), 1)
    return out


def make_longtail(dataset: LabeledSet, rho: float, seed: int = 0) -> tuple[LabeledSet, LongTailSpec]:
    """Subsample ``dataset`` into an exponentially imbalanced split.

    Classes are ranked by real count (descending, ties by class index) and
    class at rank ``k`` keeps the long-tail count for ``k``, capped at what
    is available.
    """
    if len(dataset) == 0:
        raise InvalidStateError("empty dataset")
    avail = dataset.class_counts()
    N = dataset.num_classes
    order = np.argsort(-avail, kind="stable") + 1
    mean = float(avail.mean())
    counts = np.minimum(longtail_counts(mean, rho, N), avail[order - 1])
    rng = np.random.default_rng([seed, 31])
    keep = []
    for c, n in zip(order, counts):
        idx = np.flatnonzero(dataset.labels == c)
        keep.append(rng.choice(idx, int(n), replace=False))
    subset = dataset.subset(np.sort(np.concatenate(keep)))
    return subset, LongTailSpec(float(rho), order, counts, mean)


def synthetic_target_counts(spec: LongTailSpec) -> np.ndarray:
    """Per-class synthetic quota (index 0 is class 1).

    The class at rank ``k`` receives the count at rank ``N - 1 - k``, so
    tail classes get the most synthetic data.
    """
    out = np.zeros(spec.num_classes, dtype=np.int64)
    out[spec.order - 1] = spec.counts[::-1]
    return out
