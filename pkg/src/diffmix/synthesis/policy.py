from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..data import LabeledSet
from ..errors import InvalidStateError


@dataclass(frozen=True)
class TranslationSpec:
    """What to synthesize.

    ``personalized`` selects the fine-tuned model with identifier prompts
    (Diff-*) over the base model with class-name prompts (Real-*).
    """

    strategy: Literal["gen", "aug", "mix"] = "mix"
    personalized: bool = True
    strengths: tuple[float, ...] = (0.5, 0.7, 0.9)
    gamma: float = 0.5
    multiplier: int = 5

    def __post_init__(self):
        if self.strategy not in ("gen", "aug", "mix"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        strengths = tuple(float(s) for s in self.strengths)
        object.__setattr__(self, "strengths", strengths)
        if not strengths:
            raise ValueError("strengths must be nonempty")
        if any(not 0.0 <= s <= 1.0 for s in strengths):
            raise ValueError(f"strengths must lie in [0, 1]: {strengths}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")

    @property
    def name(self) -> str:
        return ("diff" if self.personalized else "real") + "-" + self.strategy

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy, "personalized": self.personalized,
            "strengths": list(self.strengths), "gamma": self.gamma, "multiplier": self.multiplier,
        }


@dataclass(frozen=True)
class ReferencePolicy:
    """Where references come from.

    ``restricted`` fixes, per target class, a pool of ``referable_classes``
    classes drawn without replacement from all classes using ``seed``.
    """

    kind: Literal["intra_class", "full_set", "restricted"] = "full_set"
    referable_classes: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("intra_class", "full_set", "restricted"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.kind == "restricted" and (self.referable_classes is None or self.referable_classes < 1):
            raise ValueError("restricted policy needs referable_classes >= 1")

    def pool_classes(self, target_class: int, num_classes: int) -> np.ndarray:
        """1-based classes admissible as references for ``target_class``."""
        if self.kind == "intra_class":
            return np.array([target_class])
        if self.kind == "full_set":
            return np.arange(1, num_classes + 1)
        K = self.referable_classes
        if K > num_classes:
            raise InvalidStateError(f"referable_classes={K} exceeds {num_classes} classes")
        return _restricted_pools(self.seed, num_classes, K)[target_class - 1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "referable_classes": self.referable_classes, "seed": self.seed}


_POOLS: dict[tuple[int, int, int], np.ndarray] = {}


def _restricted_pools(seed: int, num_classes: int, K: int) -> np.ndarray:
    key = (seed, num_classes, K)
    if key not in _POOLS:
        rng = np.random.default_rng([seed, 17])
        pools = np.stack([rng.choice(num_classes, K, replace=False) + 1 for _ in range(num_classes)])
        pools.flags.writeable = False
        _POOLS[key] = pools
    return _POOLS[key]


def reference_index(target_class: int, policy: ReferencePolicy, trainset: LabeledSet, rng) -> int:
    if len(trainset) == 0:
        raise InvalidStateError("empty training set")
    if policy.kind == "full_set":
        return int(rng.integers(len(trainset)))
    classes = policy.pool_classes(target_class, trainset.num_classes)
    pool = np.flatnonzero(np.isin(trainset.labels, classes))
    if len(pool) == 0:
        raise InvalidStateError(f"no admissible reference for target class {target_class}")
    return int(pool[rng.integers(len(pool))])


def select_reference(target_class: int, policy: ReferencePolicy, trainset: LabeledSet, rng):
    """Draw a training image admissible as reference. Returns ``(image, reference_class)``."""
    i = reference_index(target_class, policy, trainset, rng)
    return trainset.images[i], int(trainset.labels[i])
