"""Label vectors: one-hot, translation soft labels and label smoothing.

Labels are plain float64 arrays of length N on the probability simplex.
Class indices are 1-based.
"""

from __future__ import annotations

import numpy as np


def _check_class(i, N: int, name: str) -> int:
    if isinstance(i, (bool, np.bool_)) or int(i) != i or not 1 <= int(i) <= N:
        raise ValueError(f"{name} {i!r} outside [1, {N}]")
    return int(i)


def one_hot(i: int, N: int) -> np.ndarray:
    i = _check_class(i, N, "class")
    out = np.zeros(N)
    out[i - 1] = 1.0
    return out


def target_weight(s: float, gamma: float) -> float:
    """Weight ``s ** gamma`` given to the prompted class."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"strength must lie in [0, 1], got {s}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return float(s) ** float(gamma)


def soft_label(target: int, reference: int | None, s: float | None, gamma: float, N: int) -> np.ndarray:
    """Label of a translated sample.

    The target (prompt) class gets ``w = s**gamma`` and the reference class
    ``1 - w``. With no reference or strength (generated from noise) the
    label is one-hot on the target.
    """
    target = _check_class(target, N, "target class")
    if reference is None or s is None:
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        return one_hot(target, N)
    reference = _check_class(reference, N, "reference class")
    w = target_weight(s, gamma)
    out = np.zeros(N)
    out[reference - 1] += 1.0 - w
    out[target - 1] += w
    return out


def smooth_label(label, confidence: float) -> np.ndarray:
    """``confidence * label + (1 - confidence) / N``; works row-wise on 2-D input."""
    if not 0.0 < confidence <= 1.0:
        raise ValueError(f"confidence must lie in (0, 1], got {confidence}")
    label = np.asarray(label, dtype=np.float64)
    if confidence == 1.0:
        return label.copy()
    N = label.shape[-1]
    return confidence * label + (1.0 - confidence) / N
