"""Personalization checkpoint container.

A checkpoint is an ``.npz`` archive of named arrays: ``adapter/<target>/A``,
``adapter/<target>/B``, ``identifiers``, ``losses`` and, for periodic
training snapshots, ``optim/...``. A JSON string under ``__meta__`` records
the format version, fine-tune config, metaclass, class names and the
dataset and base-model fingerprints. Loading a different format version is
refused.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidStateError
from .identifiers import IdentifierTable
from .lora import LowRankAdapter

FORMAT = "diffmix-personalization"
VERSION = 1


@dataclass
class PersonalizedCheckpoint:
    adapters: dict[str, tuple[np.ndarray, np.ndarray]]
    identifiers: np.ndarray
    metaclass: str
    config: dict
    dataset_fingerprint: str
    base_fingerprint: str
    terminology_names: list[str] | None = None
    step: int = 0
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    optim: dict[str, np.ndarray] = field(default_factory=dict)

    def meta(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "config": self.config,
            "metaclass": self.metaclass,
            "terminology_names": self.terminology_names,
            "dataset_fingerprint": self.dataset_fingerprint,
            "base_fingerprint": self.base_fingerprint,
            "step": self.step,
        }

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"identifiers": self.identifiers, "losses": np.asarray(self.losses, dtype=np.float64)}
        for target, (A, B) in sorted(self.adapters.items()):
            out[f"adapter/{target}/A"] = A
            out[f"adapter/{target}/B"] = B
        for k, v in self.optim.items():
            out[f"optim/{k}"] = v
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256(json.dumps(self.meta(), sort_keys=True).encode())
        for k, v in sorted(self.arrays().items()):
            if k.startswith("optim/") or k == "losses":
                continue
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()[:16]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, __meta__=np.array(json.dumps(self.meta(), sort_keys=True)), **self.arrays())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "PersonalizedCheckpoint":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("format") != FORMAT or meta.get("version") != VERSION:
                raise InvalidStateError(
                    f"{path}: checkpoint format {meta.get('format')} v{meta.get('version')}, "
                    f"expected {FORMAT} v{VERSION}"
                )
            adapters: dict[str, list] = {}
            optim = {}
            for k in z.files:
                if k.startswith("adapter/"):
                    target = k[len("adapter/"): -2]
                    adapters.setdefault(target, [None, None])["AB".index(k[-1])] = z[k]
                elif k.startswith("optim/"):
                    optim[k[len("optim/"):]] = z[k]
            return cls(
                adapters={t: (ab[0], ab[1]) for t, ab in adapters.items()},
                identifiers=z["identifiers"],
                metaclass=meta["metaclass"],
                config=meta["config"],
                dataset_fingerprint=meta["dataset_fingerprint"],
                base_fingerprint=meta["base_fingerprint"],
                terminology_names=meta["terminology_names"],
                step=meta["step"],
                losses=z["losses"],
                optim=optim,
            )

    def table(self) -> IdentifierTable:
        return IdentifierTable(self.metaclass, self.identifiers.copy(), self.terminology_names)

    def apply(self, model) -> None:
        """Attach this checkpoint's adapters to ``model`` (a base model)."""
        if model.base_checksum()[:16] != self.base_fingerprint:
            raise InvalidStateError("checkpoint was trained on a different base model")
        model.adapters.clear()
        for target, (A, B) in self.adapters.items():
            if target not in model.params:
                raise InvalidStateError(f"model has no weight named {target}")
            ad = LowRankAdapter(target, model.params[target].shape, rank=A.shape[1], dtype=model.dtype)
            ad.A = np.array(A, dtype=model.dtype)
            ad.B = np.array(B, dtype=model.dtype)
            model.adapters[target] = ad
        model.base_trainable = False
