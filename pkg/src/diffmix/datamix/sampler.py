"""Training streams that swap real items for synthetic ones.

Item order and replacement decisions come from two separate random
streams, so a stream with ``p = 0`` visits exactly the items a real-only
stream with the same seed would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import LabeledSet
from ..errors import InvalidStateError
from ..synthesis.manifest import DatasetManifest
from .labels import one_hot, smooth_label, soft_label


@dataclass(frozen=True)
class MixedSamplerConfig:
    """``long_tail`` draws replacements from the whole synthetic pool
    instead of the real item's class; ``gamma`` overrides the records'."""

    replacement_probability: float = 0.1
    epoch_length: int | None = None
    seed: int = 0
    batch_size: int = 32
    smoothing: float = 0.9
    long_tail: bool = False
    gamma: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.replacement_probability <= 1.0:
            raise ValueError(f"replacement probability must lie in [0, 1], got {self.replacement_probability}")
        if self.epoch_length is not None and self.epoch_length < 1:
            raise ValueError("epoch_length must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 < self.smoothing <= 1.0:
            raise ValueError(f"smoothing confidence must lie in (0, 1], got {self.smoothing}")


def real_labels(real: LabeledSet, confidence: float) -> np.ndarray:
    return np.stack([smooth_label(one_hot(c, real.num_classes), confidence) for c in real.labels])


def synthetic_labels(manifest: DatasetManifest, N: int, confidence: float, gamma=None) -> np.ndarray:
    rows = []
    for r in manifest.records:
        g = r.gamma if gamma is None else gamma
        rows.append(smooth_label(soft_label(r.target_class, r.reference_class, r.strength, g, N), confidence))
    return np.stack(rows) if rows else np.zeros((0, N))


class _Pools:
    def __init__(self, real: LabeledSet, manifest: DatasetManifest | None, cfg: MixedSamplerConfig):
        self.p = cfg.replacement_probability
        self.long_tail = cfg.long_tail
        M = 0 if manifest is None else len(manifest)
        self.size = M
        if self.p == 0:
            return
        if M == 0:
            raise InvalidStateError("replacement probability > 0 but no synthetic records")
        targets = np.array([r.target_class for r in manifest.records])
        self.by_class = {int(c): np.flatnonzero(targets == c) for c in np.unique(real.labels)}
        if not cfg.long_tail:
            for c, pool in self.by_class.items():
                if len(pool) == 0:
                    raise InvalidStateError(f"no synthetic records for class {c}")

    def replace(self, classes: np.ndarray, rng) -> np.ndarray:
        """Synthetic index per item, or -1 where the real item is kept."""
        out = np.full(len(classes), -1, dtype=np.int64)
        if self.p == 0:
            return out
        hit = np.flatnonzero(rng.random(len(classes)) < self.p)
        if self.long_tail:
            out[hit] = rng.integers(self.size, size=len(hit))
            return out
        for i in hit:
            pool = self.by_class[int(classes[i])]
            out[i] = pool[rng.integers(len(pool))]
        return out


def sample_batch(real_set: LabeledSet, synthetic_manifest, cfg: MixedSamplerConfig, rng, batch_size=None):
    """Draw real items uniformly and replace each with probability ``p``.

    Returns a list of ``(image_ref, label)``. Real items without stored
    references are named ``real:<index>``.
    """
    if len(real_set) == 0:
        raise ValueError("empty real set")
    pools = _Pools(real_set, synthetic_manifest, cfg)
    B = cfg.batch_size if batch_size is None else batch_size
    idx = rng.integers(len(real_set), size=B)
    swap = pools.replace(real_set.labels[idx], rng)
    N = real_set.num_classes
    out = []
    for i, j in zip(idx, swap):
        if j < 0:
            ref = real_set.refs[i] if real_set.refs is not None else f"real:{i}"
            out.append((ref, smooth_label(one_hot(real_set.labels[i], N), cfg.smoothing)))
        else:
            r = synthetic_manifest.records[j]
            g = r.gamma if cfg.gamma is None else cfg.gamma
            lab = soft_label(r.target_class, r.reference_class, r.strength, g, N)
            out.append((r.image_ref, smooth_label(lab, cfg.smoothing)))
    return out


class MixedSampler:
    """Epoch-wise mini-batch stream of ``(images, labels)`` arrays.

    Each epoch visits ``epoch_length`` real items (default: the set size)
    in shuffled order; each item is swapped for a synthetic record with
    probability ``p``. Epoch ``e`` depends only on ``(seed, e)``.
    """

    def __init__(self, real: LabeledSet, synthetic: DatasetManifest | None, cfg: MixedSamplerConfig,
                 synthetic_images: np.ndarray | None = None):
        if len(real) == 0:
            raise ValueError("empty real set")
        self.real = real
        self.cfg = cfg
        self.pools = _Pools(real, synthetic, cfg)
        self.num_classes = real.num_classes
        self.real_y = real_labels(real, cfg.smoothing)
        self.synth_x = None
        self.synth_y = np.zeros((0, real.num_classes))
        if synthetic is not None and len(synthetic) and cfg.replacement_probability > 0:
            self.synth_x = synthetic.images() if synthetic_images is None else np.asarray(synthetic_images)
            self.synth_y = synthetic_labels(synthetic, real.num_classes, cfg.smoothing, cfg.gamma)
        self.length = cfg.epoch_length or len(real)

    def __len__(self) -> int:
        return -(-self.length // self.cfg.batch_size)

    def draw(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        """Real indices of the epoch and the synthetic index replacing each (-1 if kept)."""
        order_rng = np.random.default_rng([self.cfg.seed, 41, epoch])
        n = len(self.real)
        reps = -(-self.length // n)
        idx = np.concatenate([order_rng.permutation(n) for _ in range(reps)])[: self.length]
        swap = self.pools.replace(self.real.labels[idx], np.random.default_rng([self.cfg.seed, 43, epoch]))
        return idx, swap

    def batches(self, epoch: int):
        idx, swap = self.draw(epoch)
        B = self.cfg.batch_size
        for b0 in range(0, len(idx), B):
            i, j = idx[b0:b0 + B], swap[b0:b0 + B]
            x = self.real.images[i].astype(np.float32)
            y = self.real_y[i].copy()
            m = j >= 0
            if m.any():
                x[m] = self.synth_x[j[m]]
                y[m] = self.synth_y[j[m]]
            yield x, y
