"""Synthetic dataset manifests.

On disk a manifest is line-delimited JSON: the first line is
``{"header": {...}}`` and every following line is one record with the keys
``image_ref, target_class, reference_class?, strength?, gamma, confidence?``
(optional keys omitted when absent). ``image_ref`` is relative to the
manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..data import load_image

RECORD_KEYS = ("image_ref", "target_class", "reference_class", "strength", "gamma", "confidence")


@dataclass(frozen=True)
class SyntheticSample:
    image_ref: str
    target_class: int
    reference_class: int | None = None
    strength: float | None = None
    gamma: float = 0.5
    confidence: float | None = None

    def to_json(self) -> dict:
        out = {"image_ref": self.image_ref, "target_class": int(self.target_class), "gamma": float(self.gamma)}
        if self.reference_class is not None:
            out["reference_class"] = int(self.reference_class)
        if self.strength is not None:
            out["strength"] = float(self.strength)
        if self.confidence is not None:
            out["confidence"] = float(self.confidence)
        return out

    @classmethod
    def from_json(cls, rec: dict) -> "SyntheticSample":
        extra = set(rec) - set(RECORD_KEYS)
        if extra:
            raise ValueError(f"unexpected record fields {sorted(extra)}")
        return cls(
            image_ref=rec["image_ref"],
            target_class=int(rec["target_class"]),
            reference_class=rec.get("reference_class"),
            strength=rec.get("strength"),
            gamma=float(rec["gamma"]),
            confidence=rec.get("confidence"),
        )

    def check_strategy(self, strategy: str) -> None:
        if strategy == "gen" and (self.reference_class is not None or self.strength is not None):
            raise ValueError(f"{self.image_ref}: generated sample carries reference or strength")
        if strategy == "aug" and self.reference_class != self.target_class:
            raise ValueError(f"{self.image_ref}: intra-class sample with reference class {self.reference_class}")


@dataclass
class DatasetManifest:
    header: dict
    records: list[SyntheticSample]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def lines(self) -> list[str]:
        out = [json.dumps({"header": self.header}, sort_keys=True)]
        out += [json.dumps(r.to_json(), sort_keys=True) for r in self.records]
        return out

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(self.lines()) + "\n")
        tmp.replace(path)
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path) as f:
            lines = [ln for ln in f if ln.strip()]
        if not lines:
            raise ValueError(f"{path} is empty")
        first = json.loads(lines[0])
        if "header" not in first:
            raise ValueError(f"{path} does not start with a header line")
        records = [SyntheticSample.from_json(json.loads(ln)) for ln in lines[1:]]
        return cls(first["header"], records, path.parent)

    def image(self, i: int) -> np.ndarray:
        return load_image(self.root / self.records[i].image_ref)

    def images(self) -> np.ndarray:
        return np.stack([self.image(i) for i in range(len(self))])

    def with_records(self, records: list[SyntheticSample], **header_updates) -> "DatasetManifest":
        return DatasetManifest({**self.header, **header_updates}, list(records), self.root)

    def annotate(self, scores) -> "DatasetManifest":
        recs = [replace(r, confidence=float(c)) for r, c in zip(self.records, scores)]
        return self.with_records(recs)

    def check(self) -> None:
        """Validate class ranges and strategy consistency of every record."""
        N = self.header.get("num_classes")
        strategy = self.header.get("spec", {}).get("strategy")
        for r in self.records:
            for c in (r.target_class, r.reference_class):
                if c is not None and N is not None and not 1 <= c <= N:
                    raise ValueError(f"{r.image_ref}: class {c} outside [1, {N}]")
            if strategy:
                r.check_strategy(strategy)
