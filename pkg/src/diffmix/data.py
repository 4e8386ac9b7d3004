"""Labelled image sets and the line-delimited index format.

An index file has one JSON object per line, ``{"image_ref": ..., "class": ...}``,
with ``image_ref`` relative to the index file's directory and 1-based class
indices. Images are ``.npy`` arrays or any format Pillow can open (scaled to
[0, 1] floats).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float32) / 255.0


def save_image(path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.asarray(image), allow_pickle=False)


@dataclass
class LabeledSet:
    """Images stacked along axis 0 with 1-based integer labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    refs: list[str] | None = None
    groups: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 1 or self.labels.max() > self.num_classes):
            raise ValueError(f"labels must lie in [1, {self.num_classes}]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSet(
            self.images[idx],
            self.labels[idx],
            self.num_classes,
            refs=None if self.refs is None else [self.refs[i] for i in idx],
            groups=None if self.groups is None else self.groups[idx],
            meta=dict(self.meta),
        )

    def class_counts(self) -> np.ndarray:
        """Counts per class, index 0 holding class 1."""
        return np.bincount(self.labels - 1, minlength=self.num_classes)

    def class_means(self) -> np.ndarray:
        flat = self.images.reshape(len(self), -1)
        return np.stack([flat[self.labels == c].mean(axis=0) for c in range(1, self.num_classes + 1)])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


def write_index(path, records: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_index(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def export_set(ds: LabeledSet, root, name: str = "index.jsonl") -> Path:
    """Write every image as ``.npy`` under ``root/images`` plus an index file."""
    root = Path(root)
    records = []
    refs = []
    for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
        ref = f"images/{i:06d}.npy"
        save_image(root / ref, img)
        rec = {"image_ref": ref, "class": int(label)}
        if ds.groups is not None:
            rec["group_id"] = int(ds.groups[i])
        records.append(rec)
        refs.append(ref)
    write_index(root / name, records)
    ds.refs = refs
    return root / name


def load_set(index_path, num_classes: int | None = None) -> LabeledSet:
    index_path = Path(index_path)
    records = read_index(index_path)
    if not records:
        raise ValueError(f"{index_path} has no records")
    images = np.stack([load_image(index_path.parent / r["image_ref"]) for r in records])
    labels = np.array([r["class"] for r in records])
    groups = np.array([r["group_id"] for r in records]) if "group_id" in records[0] else None
    n = int(labels.max()) if num_classes is None else num_classes
    return LabeledSet(images, labels, n, refs=[r["image_ref"] for r in records], groups=groups)


def subset_records(ds: LabeledSet) -> list[dict]:
    if ds.refs is None:
        raise ValueError("set has no image references")
    return [{"image_ref": r, "class": int(c)} for r, c in zip(ds.refs, ds.labels)]
