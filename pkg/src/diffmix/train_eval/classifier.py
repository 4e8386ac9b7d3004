"""Soft-label classifier training."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .. import kernels
from ..datamix.augment import cutmix, mixup
from ..diffusion.optim import Adam


class ClassifierInterface(Protocol):
    num_classes: int

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        """Logits ``(B, N)`` for a batch of images."""


def soft_cross_entropy(logits, label) -> float:
    """``-sum(label * log_softmax(logits))``; batched input gives the mean over rows."""
    logits = np.asarray(logits, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if logits.shape != label.shape:
        raise ValueError(f"logits {logits.shape} and label {label.shape} differ in shape")
    loss, _ = kernels.soft_xent(np.atleast_2d(logits), np.atleast_2d(label))
    return float(loss.mean())


class MLPClassifier:
    """Two-layer ReLU network on flattened images."""

    def __init__(self, in_dim: int, num_classes: int, hidden: int = 32, seed: int = 0):
        rng = np.random.default_rng([seed, 47])
        self.num_classes = num_classes
        self.params = {
            "w1": rng.standard_normal((in_dim, hidden)) * np.sqrt(2.0 / in_dim),
            "b1": np.zeros(hidden),
            "w2": rng.standard_normal((hidden, num_classes)) * np.sqrt(1.0 / hidden),
            "b2": np.zeros(num_classes),
        }

    def _flat(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x.reshape(len(x), -1)

    def predict_logits(self, x):
        h = np.maximum(self._flat(x) @ self.params["w1"] + self.params["b1"], 0.0)
        return h @ self.params["w2"] + self.params["b2"]

    def loss_and_grads(self, x, y):
        p = self.params
        x = self._flat(x)
        pre = x @ p["w1"] + p["b1"]
        h = np.maximum(pre, 0.0)
        logits = h @ p["w2"] + p["b2"]
        loss, d = kernels.soft_xent(logits, np.asarray(y, dtype=np.float64))
        d = d / len(x)
        dh = (d @ p["w2"].T) * (pre > 0)
        grads = {"w2": h.T @ d, "b2": d.sum(0), "w1": x.T @ dh, "b1": dh.sum(0)}
        return float(loss.mean()), grads

    def save(self, path, meta: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        info = {"kind": "mlp", "num_classes": self.num_classes, **(meta or {})}
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, __meta__=np.array(json.dumps(info, sort_keys=True)), **self.params)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> tuple["MLPClassifier", dict]:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            params = {k: z[k] for k in z.files if k != "__meta__"}
        model = cls(params["w1"].shape[0], meta["num_classes"], params["w1"].shape[1])
        model.params.update(params)
        return model, meta


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-2
    seed: int = 0
    weight_decay: float = 0.0
    augment: str = "none"
    alpha: float = 1.0

    def __post_init__(self):
        if self.augment not in ("none", "mixup", "cutmix"):
            raise ValueError(f"unknown augmentation {self.augment!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    batch_loss: list[float] = field(default_factory=list)


def _epoch_batches(stream, epoch):
    if hasattr(stream, "batches"):
        return stream.batches(epoch)
    return iter(stream)


def train_classifier(stream, model, cfg: TrainConfig) -> tuple[object, TrainHistory]:
    """Mini-batch Adam on soft cross-entropy.

    ``stream`` is either an object with ``batches(epoch)`` (such as a
    ``MixedSampler``) or a reusable sequence of ``(images, labels)``
    batches. Epoch loss is the item-weighted mean of the pre-update batch
    losses.
    """
    opt = Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 53])
    hist = TrainHistory()
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for x, y in _epoch_batches(stream, epoch):
            if cfg.augment == "mixup":
                x, y = mixup((x, y), cfg.alpha, rng)
            elif cfg.augment == "cutmix":
                x, y = cutmix((x, y), cfg.alpha, rng)
            loss, grads = model.loss_and_grads(x, y)
            opt.step(grads)
            hist.batch_loss.append(loss)
            total += loss * len(x)
            count += len(x)
        if count == 0:
            raise ValueError("training stream produced no items")
        hist.epoch_loss.append(total / count)
    return model, hist
