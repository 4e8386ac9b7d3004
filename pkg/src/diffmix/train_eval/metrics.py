"""Accuracy, group and shot-band accuracy, FID and metric reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..data import LabeledSet, read_index


def predictions(model, testset: LabeledSet) -> np.ndarray:
    """1-based argmax class; ties go to the lowest class index."""
    logits = model.predict_logits(testset.images)
    return np.argmax(logits, axis=1) + 1


def evaluate_accuracy(model, testset: LabeledSet) -> float:
    if len(testset) == 0:
        raise ValueError("empty test set")
    return float(np.mean(predictions(model, testset) == testset.labels))


@dataclass
class GroupSpec:
    """Group id per test item plus optional display names."""

    group_of: np.ndarray
    names: dict[int, str] = field(default_factory=dict)

    @classmethod
    def from_testset(cls, testset: LabeledSet, names=None) -> "GroupSpec":
        if testset.groups is None:
            raise ValueError("test set carries no groups")
        names = names if names is not None else testset.meta.get("group_names", {})
        if not isinstance(names, dict):
            names = dict(enumerate(names))
        return cls(np.asarray(testset.groups), {int(k): v for k, v in names.items()})

    @classmethod
    def from_file(cls, path, testset: LabeledSet, names=None) -> "GroupSpec":
        """Read ``{image_ref, group_id}`` lines and align them to ``testset.refs``."""
        if testset.refs is None:
            raise ValueError("test set has no image references to align groups with")
        table = {r["image_ref"]: int(r["group_id"]) for r in read_index(path)}
        missing = [r for r in testset.refs if r not in table]
        if missing:
            raise ValueError(f"{len(missing)} test items have no group, e.g. {missing[0]}")
        return cls(np.array([table[r] for r in testset.refs]), dict(names or {}))


def group_accuracy(model, testset: LabeledSet, groups: GroupSpec) -> tuple[dict[int, float], float]:
    """Accuracy within each group and over all items (micro average)."""
    g = np.asarray(groups.group_of)
    if len(g) != len(testset):
        raise ValueError(f"group spec covers {len(g)} items, test set has {len(testset)}")
    if len(testset) == 0:
        raise ValueError("empty test set")
    hit = predictions(model, testset) == testset.labels
    per = {int(k): float(hit[g == k].mean()) for k in np.unique(g)}
    return per, float(hit.mean())


def shot_band_accuracy(model, testset: LabeledSet, train_counts, thresholds=(20, 5)) -> dict[str, float]:
    """Accuracy over classes with many (> many_min), few (< few_max) and medium training counts.

    ``train_counts[k]`` is the count of class ``k + 1``. Empty bands are left out.
    """
    many_min, few_max = thresholds
    if not few_max < many_min:
        raise ValueError(f"need few_max < many_min, got {thresholds}")
    counts = np.asarray(train_counts)
    if len(counts) != testset.num_classes:
        raise ValueError("train_counts needs one entry per class")
    n = counts[testset.labels - 1]
    hit = predictions(model, testset) == testset.labels
    masks = {"many": n > many_min, "medium": (n >= few_max) & (n <= many_min), "few": n < few_max}
    return {k: float(hit[m].mean()) for k, m in masks.items() if m.any()}


def _as_features(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        a = a.reshape(len(a), -1)
    if len(a) < 2:
        raise ValueError("need at least two feature vectors")
    if not np.isfinite(a).all():
        raise ValueError("features contain non-finite values")
    return a


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(features_a, features_b) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    The trace of ``(S_a S_b)^(1/2)`` is taken from the symmetric product
    ``S_a^(1/2) S_b S_a^(1/2)``, whose eigenvalues are clipped at zero.
    """
    a, b = _as_features(features_a), _as_features(features_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    mu = a.mean(0) - b.mean(0)
    ca = np.atleast_2d(np.cov(a, rowvar=False))
    cb = np.atleast_2d(np.cov(b, rowvar=False))
    ra = _psd_sqrt(ca)
    prod = ra @ cb @ ra
    w = np.linalg.eigvalsh((prod + prod.T) / 2)
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    return float(max(mu @ mu + np.trace(ca) + np.trace(cb) - 2.0 * tr_sqrt, 0.0))


@dataclass
class MetricsReport:
    top1: float
    per_group: dict[int, float] | None = None
    group_names: dict[int, str] = field(default_factory=dict)
    bands: dict[str, float] | None = None
    fid: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        accs = [self.top1, *(self.per_group or {}).values(), *(self.bands or {}).values()]
        if any(not 0.0 <= a <= 1.0 for a in accs):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("per_group", "group_names"):
            if d[k] is not None:
                d[k] = {str(g): v for g, v in d[k].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        for k in ("per_group", "group_names"):
            if d.get(k) is not None:
                d[k] = {int(g): v for g, v in d[k].items()}
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def rows(self) -> list[tuple[str, str]]:
        rows = [("top1", f"{self.top1:.4f}")]
        for g in sorted(self.per_group or {}):
            rows.append((f"group {g} {self.group_names.get(g, '')}".rstrip(), f"{self.per_group[g]:.4f}"))
        for b in ("many", "medium", "few"):
            if self.bands and b in self.bands:
                rows.append((b, f"{self.bands[b]:.4f}"))
        if self.fid is not None:
            rows.append(("fid", f"{self.fid:.4f}"))
        return rows

    def table(self) -> str:
        rows = self.rows()
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)
